#pragma once

#include <algorithm>
#include <string>
#include <vector>

namespace oracle {

// Brute force: enumerate every common block, keep the longest (earliest in a,
// then earliest in b), recurse on the flanks.
inline std::size_t brute_matches(const std::string& a, std::size_t alo, std::size_t ahi, const std::string& b,
                                 std::size_t blo, std::size_t bhi) {
    std::size_t best_i = alo, best_j = blo, best_k = 0;
    for (std::size_t i = alo; i < ahi; ++i)
        for (std::size_t j = blo; j < bhi; ++j) {
            std::size_t k = 0;
            while (i + k < ahi && j + k < bhi && a[i + k] == b[j + k]) ++k;
            if (k > best_k) {
                best_k = k;
                best_i = i;
                best_j = j;
            }
        }
    if (best_k == 0) return 0;
    return best_k + brute_matches(a, alo, best_i, b, blo, best_j) +
           brute_matches(a, best_i + best_k, ahi, b, best_j + best_k, bhi);
}

inline double brute_ratio(const std::string& a, const std::string& b) {
    if (a.empty() && b.empty()) return 1.0;
    const double total = static_cast<double>(a.size() + b.size());
    const auto m = std::max(brute_matches(a, 0, a.size(), b, 0, b.size()), brute_matches(b, 0, b.size(), a, 0, a.size()));
    return 2.0 * static_cast<double>(m) / total;
}

// Every string over {a, b, c} up to max_len, shortest first.
inline std::vector<std::string> all_strings(std::size_t max_len) {
    std::vector<std::string> out{""};
    std::size_t begin = 0;
    for (std::size_t len = 1; len <= max_len; ++len) {
        const std::size_t end = out.size();
        for (std::size_t i = begin; i < end; ++i)
            for (char c : {'a', 'b', 'c'}) out.push_back(out[i] + c);
        begin = end;
    }
    return out;
}

}  // namespace oracle
