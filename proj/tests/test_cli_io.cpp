#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <fstream>
#include <sstream>

#include "bilevelmp/csvio.hpp"
#include "doctest.h"

using namespace bilevelmp;

TEST_CASE("config digest is stable and content sensitive") {
    std::string a = config_digest("equilibrium|rrg|100,3|seed=1");
    std::string b = config_digest("equilibrium|rrg|100,3|seed=1");
    std::string c = config_digest("equilibrium|rrg|100,3|seed=2");
    CHECK(a == b);
    CHECK(a != c);
    CHECK(a.size() == 16);
    for (char ch : a) CHECK(std::isxdigit((unsigned char)ch));
}

TEST_CASE("doubles round trip through the formatter") {
    for (double v : {1.0 / 3.0, 0.1, 1e-300, 123456.789, -2.5e17, 0.0}) {
        std::string s = format_double(v);
        CHECK(std::stod(s) == v);
    }
}

TEST_CASE("csv files start with the metadata header") {
    std::string path = "csv_test.csv";
    {
        CsvWriter csv(path, 42, config_digest("cfg"));
        csv.header({"a", "b"});
        csv.row({1.0, 0.5});
        csv.row({2.0, 1.0 / 3.0});
        REQUIRE(csv.good());
    }
    std::ifstream in(path);
    std::string line;
    REQUIRE(std::getline(in, line));
    CHECK(line.rfind("# bilevelmp ", 0) == 0);
    CHECK(line.find("seed=42") != std::string::npos);
    CHECK(line.find("config=" + config_digest("cfg")) != std::string::npos);
    REQUIRE(std::getline(in, line));
    CHECK(line == "a,b");
    REQUIRE(std::getline(in, line));
    CHECK(line == "1,0.5");
    REQUIRE(std::getline(in, line));
    CHECK(line == "2,0.33333333333333331");
    std::remove(path.c_str());
}

TEST_CASE("identical writes are byte identical") {
    auto write_once = [](const std::string& path) {
        CsvWriter csv(path, 7, config_digest("same"));
        csv.header({"x"});
        for (int k = 0; k < 100; ++k) csv.row({k * 0.37});
    };
    write_once("csv_a.csv");
    write_once("csv_b.csv");
    std::ifstream a("csv_a.csv", std::ios::binary), b("csv_b.csv", std::ios::binary);
    std::stringstream sa, sb;
    sa << a.rdbuf();
    sb << b.rdbuf();
    CHECK(sa.str() == sb.str());
    CHECK(!sa.str().empty());
    std::remove("csv_a.csv");
    std::remove("csv_b.csv");
}
