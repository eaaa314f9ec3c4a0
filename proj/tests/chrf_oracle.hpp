#pragma once

#include <algorithm>
#include <map>
#include <string>

// Brute-force chrF over byte-free code point strings: enumerates every
// substring of each order and compares multiset counts directly.
namespace oracle {

inline std::u32string strip_spaces(const std::u32string& s) {
    std::u32string out;
    for (char32_t c : s) {
        if (c != U' ' && c != U'\t' && c != U'\n') out.push_back(c);
    }
    return out;
}

struct Counts {
    long long hyp = 0, ref = 0, match = 0;
};

inline Counts order_counts(const std::u32string& h, const std::u32string& r, std::size_t n) {
    std::map<std::u32string, long long> hm, rm;
    for (std::size_t i = 0; i + n <= h.size(); ++i) hm[h.substr(i, n)]++;
    for (std::size_t i = 0; i + n <= r.size(); ++i) rm[r.substr(i, n)]++;
    Counts c;
    for (const auto& [g, k] : hm) {
        c.hyp += k;
        const auto it = rm.find(g);
        if (it != rm.end()) c.match += std::min(k, it->second);
    }
    for (const auto& [g, k] : rm) c.ref += k;
    return c;
}

inline double chrf(const std::u32string& hyp, const std::u32string& ref, int order = 6, double beta = 2.0) {
    const auto h = strip_spaces(hyp);
    const auto r = strip_spaces(ref);
    double p = 0, q = 0;
    int eff = 0;
    for (int n = 1; n <= order; ++n) {
        const Counts c = order_counts(h, r, static_cast<std::size_t>(n));
        if (c.hyp > 0 && c.ref > 0) {
            p += static_cast<double>(c.match) / static_cast<double>(c.hyp);
            q += static_cast<double>(c.match) / static_cast<double>(c.ref);
            ++eff;
        }
    }
    if (eff == 0) return 0.0;
    p /= eff;
    q /= eff;
    if (p + q == 0) return 0.0;
    const double b2 = beta * beta;
    return 100.0 * (1 + b2) * p * q / (b2 * p + q);
}

}  // namespace oracle
