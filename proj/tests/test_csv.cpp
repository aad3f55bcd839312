#include <sstream>

#include "doctest.h"
#include "dce/csv.hpp"
#include "dce/error.hpp"

using namespace dce;

TEST_CASE("read handles quotes, blank lines and CRLF") {
  std::istringstream in("a,b,c\r\n1,\"x, y\",\"say \"\"hi\"\"\"\r\n\r\n2,,3\n");
  const auto t = csv::read(in, "t.csv");
  REQUIRE(t.header == std::vector<std::string>{"a", "b", "c"});
  REQUIRE(t.rows.size() == 2);
  CHECK(t.rows[0] == std::vector<std::string>{"1", "x, y", "say \"hi\""});
  CHECK(t.rows[1] == std::vector<std::string>{"2", "", "3"});
  CHECK(t.lines == std::vector<int>{2, 4});
  CHECK(t.column("c") == 2);
  CHECK(t.column("zz") == -1);
}

TEST_CASE("ragged rows name the line") {
  std::istringstream in("a,b\n1,2\n3\n");
  try {
    csv::read(in, "bad.csv");
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("bad.csv:3") != std::string::npos);
  }
  std::istringstream empty("");
  CHECK_THROWS_AS(csv::read(empty), FormatError);
  std::istringstream open_quote("a\n\"x\n");
  CHECK_THROWS_AS(csv::read(open_quote), FormatError);
}

TEST_CASE("write_row quotes only when needed and round-trips") {
  std::ostringstream out;
  const std::vector<std::string> fields{"plain", "with,comma", "with \"quote\"", ""};
  csv::write_row(out, fields);
  CHECK(out.str() == "plain,\"with,comma\",\"with \"\"quote\"\"\",\n");
  std::istringstream in("h1,h2,h3,h4\n" + out.str());
  CHECK(csv::read(in).rows[0] == fields);
}

TEST_CASE("numbers") {
  CHECK(csv::format_number(0.0) == "0");
  CHECK(csv::format_number(-0.0) == "0");
  CHECK(csv::format_number(1.0) == "1");
  CHECK(csv::format_number(-1.0) == "-1");
  const double x = 0.1 + 0.2;
  CHECK(csv::parse_double(csv::format_number(x), "s", 1) == x);
  CHECK(csv::parse_double(" 2.5 ", "s", 1) == 2.5);
  CHECK(csv::parse_int("42", "s", 1) == 42);
  CHECK_THROWS_AS(csv::parse_double("abc", "s", 1), FormatError);
  CHECK_THROWS_AS(csv::parse_int("4.2", "s", 1), FormatError);
  CHECK(csv::trim("  a b \t") == "a b");
}
