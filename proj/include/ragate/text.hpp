#pragma once

// Deterministic text analysis shared by the retriever, the lexical similarity
// measure and answer normalization. Lowercases ASCII, keeps bytes >= 0x80
// verbatim (UTF-8 passthrough), maps everything else to a separator.

#include <string>
#include <string_view>
#include <vector>

namespace ragate {

/// Analyzer tokens: lowercase alphanumerics split on any other ASCII byte.
std::vector<std::string> analyze(std::string_view text);

/// Multiset token F1 between two token lists; both empty -> 1, one empty -> 0.
double token_f1(const std::vector<std::string>& a, const std::vector<std::string>& b);

/// Lexical similarity on analyzer tokens. sim(x,x) = 1, symmetric, in [0,1].
double lexical_token_f1(std::string_view a, std::string_view b);

}  // namespace ragate
