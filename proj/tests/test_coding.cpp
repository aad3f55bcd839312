#include <numeric>
#include <random>

#include "doctest.h"
#include "dce/coding.hpp"
#include "dce/error.hpp"
#include "fixtures.hpp"

using namespace dce;

TEST_CASE("enumerate_profiles counts and order") {
  CHECK(enumerate_profiles(test::worked_spec()).size() == 108);
  CHECK(enumerate_profiles(test::spec_with_levels({2})).size() == 2);

  const auto p = enumerate_profiles(test::spec_with_levels({3, 3}));
  REQUIRE(p.size() == 9);
  CHECK(p.front().levels == std::vector<int>{1, 1});
  CHECK(p[1].levels == std::vector<int>{1, 2});  // last attribute fastest
  CHECK(p.back().levels == std::vector<int>{3, 3});
  CHECK(std::is_sorted(p.begin(), p.end()));
  CHECK(std::adjacent_find(p.begin(), p.end()) == p.end());
}

TEST_CASE("count_pairwise_choice_sets") {
  CHECK(count_pairwise_choice_sets(108) == 5778);
  CHECK(count_pairwise_choice_sets(2) == 1);
  CHECK(count_pairwise_choice_sets(10) == 45);
  CHECK_THROWS_AS(count_pairwise_choice_sets(1), DomainError);
  CHECK_THROWS_AS(count_pairwise_choice_sets(0), DomainError);
}

TEST_CASE("encode_level follows the coding table") {
  CHECK(test::vec(encode_level(1, 4, Coding::dummy)) == std::vector<double>{0, 0, 0});
  CHECK(test::vec(encode_level(3, 4, Coding::dummy)) == std::vector<double>{0, 1, 0});
  CHECK(test::vec(encode_level(4, 4, Coding::effects)) == std::vector<double>{-1, -1, -1});
  CHECK(test::vec(encode_level(2, 4, Coding::effects)) == std::vector<double>{0, 1, 0});
  CHECK(test::vec(encode_level(3, 3, Coding::effects)) == std::vector<double>{-1, -1});
  CHECK(test::vec(encode_level(1, 2, Coding::effects)) == std::vector<double>{1});
}

TEST_CASE("encode_profile concatenates attribute blocks") {
  const auto spec = test::worked_spec();
  const auto row = encode_profile(Profile{{1, 1, 3, 2, 3}}, spec);
  CHECK(row.size() == 8);
  CHECK(test::vec(row) == std::vector<double>{1, 0, 1, -1, -1, -1, -1, -1});
}

TEST_CASE("decode_row") {
  const auto spec = test::worked_spec();
  Eigen::VectorXd row(8);
  row << 1, 0, 1, -1, -1, -1, -1, -1;
  CHECK(decode_row(row, spec).levels == std::vector<int>{1, 1, 3, 2, 3});

  Eigen::VectorXd block(2);
  block << -1, -1;
  CHECK(decode_level(block, Coding::effects) == 3);
  block << 0, 0;
  CHECK(decode_level(block, Coding::effects) == 0);
  CHECK(decode_level(block, Coding::dummy) == 1);

  Eigen::VectorXd zero = Eigen::VectorXd::Zero(8);
  try {
    decode_row(zero, spec);
    FAIL("expected DecodeError");
  } catch (const DecodeError& e) {
    CHECK(std::string(e.what()).find("Efficacy") != std::string::npos);
  }
  Eigen::VectorXd bad = row;
  bad(3) = 0.5;  // Dose block
  try {
    decode_row(bad, spec);
    FAIL("expected DecodeError");
  } catch (const DecodeError& e) {
    CHECK(std::string(e.what()).find("Dose") != std::string::npos);
  }
  CHECK_THROWS_AS(decode_row(Eigen::VectorXd::Zero(7), spec), DecodeError);
}

TEST_CASE("round trip over all worked profiles, both codings") {
  for (Coding c : {Coding::effects, Coding::dummy}) {
    auto spec = test::worked_spec();
    for (auto& a : spec.attributes) a.coding = c;
    for (const auto& p : enumerate_profiles(spec)) CHECK(decode_row(encode_profile(p, spec), spec) == p);
  }
}

TEST_CASE("spec widths and validation") {
  auto spec = test::worked_spec();
  CHECK(spec.total_levels() == 13);
  CHECK(spec.attribute_width() == 8);
  CHECK(spec.design_width() == 9);
  spec.no_choice = false;
  spec.n_alts = 2;
  CHECK(spec.design_width() == 8);
  CHECK(spec.attribute_offset(2) == 3);
  CHECK(spec.price_attribute() == 4);
  CHECK(test::spec_with_levels({2, 3}).price_attribute() == -1);
  CHECK(test::worked_spec().attribute_column_names() ==
        std::vector<std::string>{"Var11", "Var12", "Var21", "Var31", "Var32", "Var41", "Var51", "Var52"});

  auto dup = test::worked_spec();
  dup.attributes[0].levels = {"a", "a", "b"};
  CHECK_THROWS_AS(dup.validate(), DomainError);
  auto single = test::worked_spec();
  single.attributes[1].levels = {"only"};
  CHECK_THROWS_AS(single.validate(), DomainError);
  auto two_prices = test::worked_spec();
  two_prices.attributes[0].is_price = two_prices.attributes[1].is_price = true;
  CHECK_THROWS_AS(two_prices.validate(), DomainError);
  auto blocks = test::worked_spec();
  blocks.n_blocks = 3;
  CHECK_THROWS_AS(blocks.validate(), DomainError);
}

TEST_CASE("parse_experiment_spec") {
  const auto spec = parse_experiment_spec(R"({
    "attributes": [
      {"name": "A", "levels": ["x", "y", "z"], "coding": "dummy"},
      {"name": "Cost", "levels": ["1", "2"], "is_price": true, "unit": "EUR", "values": [1, 2]}
    ],
    "n_alts": 2, "n_sets": 4, "no_choice": false, "n_blocks": 2})");
  CHECK(spec.attributes.size() == 2);
  CHECK(spec.attributes[0].coding == Coding::dummy);
  CHECK(spec.attributes[1].coding == Coding::effects);
  CHECK(spec.price_attribute() == 1);
  CHECK(spec.attributes[1].values == std::vector<double>{1, 2});
  CHECK(spec.n_blocks == 2);
  CHECK_THROWS_AS(parse_experiment_spec("{"), FormatError);
  CHECK_THROWS_AS(parse_experiment_spec(R"({"attributes": []})"), DomainError);
  CHECK_THROWS_AS(parse_coding("orthogonal"), DomainError);
  CHECK(parse_coding("E") == Coding::effects);
  CHECK(parse_coding("dummy") == Coding::dummy);
}

TEST_CASE("example spec file loads") {
  const auto spec = load_experiment_spec(test::data_dir() / "spec.json");
  CHECK(spec.n_attributes() == 5);
  CHECK(enumerate_profiles(spec).size() == 108);
  CHECK(spec.design_width() == 9);
}
