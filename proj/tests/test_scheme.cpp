#include <catch_amalgamated.hpp>

#include <set>

#include "relabel/scheme.hpp"

using namespace relabel;

TEST_CASE("named schemes map to their configurations") {
  using enum TimeLevel;
  CHECK(named_scheme(1) == method1(0, 0, m, next));
  CHECK(named_scheme(2) == method1(0, 1, m, m));
  CHECK(named_scheme(3) == method1(1, 0, next, next));
  CHECK(named_scheme(4) == method1(1, 1, next, m));
  CHECK(named_scheme(5) == method2(0, 0));
  CHECK(named_scheme(6) == method2(1, 1));
  CHECK_THROWS_AS(named_scheme(0), std::out_of_range);
  CHECK_THROWS_AS(named_scheme(7), std::out_of_range);
}

TEST_CASE("all_schemes enumerates twenty distinct configurations") {
  const auto all = all_schemes();
  REQUIRE(all.size() == 20);
  std::set<std::string> labels;
  for (const auto& s : all) labels.insert(s.label());
  CHECK(labels.size() == 20);
  CHECK(all.front().label() == "M1_C0A0_m_np1");
  CHECK(all.back().label() == "M2_C1A1");
  for (int n = 1; n <= 6; ++n) CHECK(std::count(all.begin(), all.end(), named_scheme(n)) == 1);
}

TEST_CASE("method two ignores the time levels in comparisons") {
  SchemeConfig a = method2(0, 1);
  SchemeConfig b = a;
  b.q = TimeLevel::next;
  CHECK(a == b);
  CHECK(scheme_number(b) == std::nullopt);
  CHECK(scheme_number(method2(1, 1)) == 6);
}

TEST_CASE("parse_scheme accepts numbers, prefixed numbers and labels") {
  CHECK(parse_scheme("4") == named_scheme(4));
  CHECK(parse_scheme("scheme5") == named_scheme(5));
  CHECK(parse_scheme("M1_C0A0_m_m") == method1(0, 0, TimeLevel::m, TimeLevel::m));
  CHECK_THROWS_AS(parse_scheme("M3_C0A0"), std::invalid_argument);
  CHECK_THROWS_AS(parse_scheme("7"), std::invalid_argument);
  CHECK(parse_scheme_list("all20").size() == 20);
  CHECK(parse_scheme_list("named").size() == 6);
  const auto picked = parse_scheme_list("1,M2_C0A1,6");
  REQUIRE(picked.size() == 3);
  CHECK(picked[1] == method2(0, 1));
}
