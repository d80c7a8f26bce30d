#include "csm/text.hpp"

#include "csm/error.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>

namespace csm::text {

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(sep, start);
        if (pos == std::string_view::npos) {
            out.push_back(s.substr(start));
            return out;
        }
        out.push_back(s.substr(start, pos - start));
        start = pos + 1;
    }
}

std::vector<std::string> split_list(std::string_view s, char sep) {
    std::vector<std::string> out;
    for (auto piece : split(s, sep)) {
        piece = trim(piece);
        if (!piece.empty()) {
            out.emplace_back(piece);
        }
    }
    return out;
}

std::string format_double(double v) {
    if (v == 0.0) {
        return "0";
    }
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    (void)ec;
    return std::string(buf, end);
}

std::string format_fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    std::string s(buf);
    if (s == "-0" || s.rfind("-0.", 0) == 0) {
        // avoid "-0.000" for tiny negative rounding noise
        bool all_zero = true;
        for (char c : s.substr(1)) {
            if (c != '0' && c != '.') {
                all_zero = false;
            }
        }
        if (all_zero) {
            s.erase(0, 1);
        }
    }
    return s;
}

std::string format_percent(double ratio) {
    std::string s = format_fixed(ratio * 100.0, 1);
    if (s.size() > 2 && s.compare(s.size() - 2, 2, ".0") == 0) {
        s.resize(s.size() - 2);
    }
    return s + "%";
}

std::optional<double> parse_double(std::string_view s) {
    s = trim(s);
    if (s.empty()) {
        return std::nullopt;
    }
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v)) {
        return std::nullopt;
    }
    return v;
}

std::optional<std::int64_t> parse_int(std::string_view s) {
    s = trim(s);
    if (s.empty()) {
        return std::nullopt;
    }
    std::int64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) {
        return std::nullopt;
    }
    return v;
}

std::uint64_t fnv1a64(std::string_view data) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

const std::string* Section::find(std::string_view key) const {
    for (const auto& [k, v] : entries) {
        if (k == key) {
            return &v;
        }
    }
    return nullptr;
}

std::vector<std::string> Section::all(std::string_view key) const {
    std::vector<std::string> out;
    for (const auto& [k, v] : entries) {
        if (k == key) {
            out.push_back(v);
        }
    }
    return out;
}

std::vector<Section> parse_sections(std::string_view content) {
    std::vector<Section> sections(1);
    std::size_t lineno = 0;
    for (auto raw : split(content, '\n')) {
        ++lineno;
        const auto line = trim(raw);
        if (line.empty() || line.front() == '#') {
            continue;
        }
        if (line.front() == '[') {
            if (line.back() != ']') {
                throw ParseError(lineno, "unterminated section header");
            }
            Section s;
            s.name = std::string(trim(line.substr(1, line.size() - 2)));
            s.line = lineno;
            sections.push_back(std::move(s));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ParseError(lineno, "expected 'key = value'");
        }
        const auto key = trim(line.substr(0, eq));
        if (key.empty()) {
            throw ParseError(lineno, "empty key");
        }
        sections.back().entries.emplace_back(std::string(key), std::string(trim(line.substr(eq + 1))));
        sections.back().entry_lines.push_back(lineno);
    }
    return sections;
}

} // namespace csm::text
