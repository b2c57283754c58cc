// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cctype>
#include <string>
#include <string_view>
#include <vector>

namespace lodestone {

inline std::string_view trim(std::string_view s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

inline std::vector<std::string_view> split_lines(std::string_view s) {
    std::vector<std::string_view> lines;
    size_t start = 0;
    while (start <= s.size()) {
        const size_t nl = s.find('\n', start);
        if (nl == std::string_view::npos) {
            lines.push_back(s.substr(start));
            break;
        }
        lines.push_back(s.substr(start, nl - start));
        start = nl + 1;
    }
    return lines;
}

/// Whitespace tokenization, nothing else.
inline std::vector<std::string> split_ws(std::string_view s) {
    std::vector<std::string> out;
    size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
        size_t j = i;
        while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
        if (j > i) out.emplace_back(s.substr(i, j - i));
        i = j;
    }
    return out;
}

/// Marker line that introduces a trailing answer-options block in raw task
/// text. The marker and everything after it are stripped by sanitize_input.
inline constexpr std::string_view kOptionsMarker = "OPTIONS:";

/// Cleans one raw task input: drops any trailing options block introduced by
/// a line equal to `OPTIONS:`, replaces newlines with spaces, collapses space
/// runs, trims. Total and idempotent.
inline std::string sanitize_input(std::string_view raw) {
    // Truncate at the options marker line, if present.
    size_t cut = raw.size();
    {
        size_t start = 0;
        while (start <= raw.size()) {
            const size_t nl = raw.find('\n', start);
            const size_t end = (nl == std::string_view::npos) ? raw.size() : nl;
            if (trim(raw.substr(start, end - start)) == kOptionsMarker) {
                cut = start;
                break;
            }
            if (nl == std::string_view::npos) break;
            start = nl + 1;
        }
    }

    std::string out;
    out.reserve(cut);
    bool in_space = true;  // leading whitespace is dropped
    for (size_t i = 0; i < cut; ++i) {
        char c = raw[i];
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!in_space) out.push_back(' ');
            in_space = true;
        } else {
            out.push_back(c);
            in_space = false;
        }
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out;
}

/// Lowercase + strip punctuation + whitespace-tokenize; the shared
/// normalization behind token_f1 and exact_match.
inline std::vector<std::string> normalize_tokens(std::string_view s) {
    std::string cleaned;
    cleaned.reserve(s.size());
    for (char c : s) {
        const auto u = static_cast<unsigned char>(c);
        if (std::ispunct(u)) continue;
        cleaned.push_back(static_cast<char>(std::tolower(u)));
    }
    return split_ws(cleaned);
}

inline std::string join(const std::vector<std::string>& parts, std::string_view sep) {
    std::string out;
    for (size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

}  // namespace lodestone
