#pragma once

#include <array>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace relabel {

// Property-transfer formulation. Method one relabels the intensive property
// with the nu coefficient; method two transfers the mass-weighted quantity
// eta*phi and divides by the new mass.
enum class Method { one, two };

// Time level used for the eta ratio in the method-one nu coefficient:
// `m` is the post-dynamics level, `next` the post-transfer level n+1.
enum class TimeLevel { m, next };

struct SchemeConfig {
  Method method = Method::one;
  int alpha_c = 0;  // continuity off-centring, 0 explicit / 1 implicit
  int alpha_a = 0;  // momentum and temperature off-centring (always equal)
  TimeLevel q = TimeLevel::m;
  TimeLevel r = TimeLevel::m;

  // Compact identifier, e.g. "M1_C0A0_m_np1" or "M2_C1A1".
  [[nodiscard]] std::string label() const {
    std::string s = method == Method::one ? "M1_C" : "M2_C";
    s += static_cast<char>('0' + alpha_c);
    s += 'A';
    s += static_cast<char>('0' + alpha_a);
    if (method == Method::one) {
      s += q == TimeLevel::m ? "_m" : "_np1";
      s += r == TimeLevel::m ? "_m" : "_np1";
    }
    return s;
  }

  friend bool operator==(const SchemeConfig& a, const SchemeConfig& b) {
    if (a.method != b.method || a.alpha_c != b.alpha_c || a.alpha_a != b.alpha_a) return false;
    return a.method == Method::two || (a.q == b.q && a.r == b.r);
  }
};

[[nodiscard]] constexpr SchemeConfig method1(int alpha_c, int alpha_a, TimeLevel q, TimeLevel r) {
  return {Method::one, alpha_c, alpha_a, q, r};
}

[[nodiscard]] constexpr SchemeConfig method2(int alpha_c, int alpha_a) {
  return {Method::two, alpha_c, alpha_a, TimeLevel::m, TimeLevel::m};
}

// The six conservative schemes by their canonical number.
[[nodiscard]] inline SchemeConfig named_scheme(int number) {
  using enum TimeLevel;
  switch (number) {
    case 1: return method1(0, 0, m, next);
    case 2: return method1(0, 1, m, m);
    case 3: return method1(1, 0, next, next);
    case 4: return method1(1, 1, next, m);
    case 5: return method2(0, 0);
    case 6: return method2(1, 1);
    default: throw std::out_of_range("named scheme number must be in 1..6, got " + std::to_string(number));
  }
}

[[nodiscard]] inline std::optional<int> scheme_number(const SchemeConfig& cfg) {
  for (int n = 1; n <= 6; ++n)
    if (named_scheme(n) == cfg) return n;
  return std::nullopt;
}

// All 20 schemes: the 16 method-one variants grouped by (q, r) and then
// (alpha_c, alpha_a), followed by the four method-two variants.
[[nodiscard]] inline std::vector<SchemeConfig> all_schemes() {
  using enum TimeLevel;
  std::vector<SchemeConfig> out;
  const std::array<std::array<TimeLevel, 2>, 4> levels{{{m, next}, {m, m}, {next, next}, {next, m}}};
  for (const auto& [q, r] : levels)
    for (int ac = 0; ac <= 1; ++ac)
      for (int aa = 0; aa <= 1; ++aa) out.push_back(method1(ac, aa, q, r));
  for (int ac = 0; ac <= 1; ++ac)
    for (int aa = 0; aa <= 1; ++aa) out.push_back(method2(ac, aa));
  return out;
}

// Accepts "1".."6", "scheme3", or a label as produced by SchemeConfig::label().
[[nodiscard]] inline SchemeConfig parse_scheme(std::string_view text) {
  auto fail = [&] { return std::invalid_argument("unrecognised scheme '" + std::string(text) + "'"); };
  if (text.starts_with("scheme")) text.remove_prefix(6);
  if (text.size() == 1 && text[0] >= '1' && text[0] <= '6') return named_scheme(text[0] - '0');
  for (const auto& cfg : all_schemes())
    if (cfg.label() == text) return cfg;
  throw fail();
}

// Parses a comma-separated selection; "all20" and "named" expand to groups.
[[nodiscard]] inline std::vector<SchemeConfig> parse_scheme_list(std::string_view text) {
  if (text == "all20" || text == "all") return all_schemes();
  std::vector<SchemeConfig> out;
  if (text == "named") {
    for (int n = 1; n <= 6; ++n) out.push_back(named_scheme(n));
    return out;
  }
  while (!text.empty()) {
    const auto comma = text.find(',');
    out.push_back(parse_scheme(text.substr(0, comma)));
    if (comma == std::string_view::npos) break;
    text.remove_prefix(comma + 1);
  }
  return out;
}

}  // namespace relabel
