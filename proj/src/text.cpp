#include "ragate/text.hpp"

#include <algorithm>
#include <cctype>
#include <unordered_map>

namespace ragate {

std::vector<std::string> analyze(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : text) {
    if (c >= 0x80) {
      cur.push_back(static_cast<char>(c));
    } else if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

double token_f1(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  if (a.empty() && b.empty()) return 1.0;
  if (a.empty() || b.empty()) return 0.0;
  std::unordered_map<std::string, int> counts;
  for (const auto& t : a) ++counts[t];
  int overlap = 0;
  for (const auto& t : b) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  if (overlap == 0) return 0.0;
  double precision = static_cast<double>(overlap) / static_cast<double>(b.size());
  double recall = static_cast<double>(overlap) / static_cast<double>(a.size());
  return 2.0 * precision * recall / (precision + recall);
}

double lexical_token_f1(std::string_view a, std::string_view b) {
  return token_f1(analyze(a), analyze(b));
}

}  // namespace ragate
