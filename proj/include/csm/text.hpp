#pragma once

// Small text helpers shared by the log, config and model formats.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace csm::text {

std::string_view trim(std::string_view s);
std::vector<std::string_view> split(std::string_view s, char sep);
/// Splits on `sep`, trims each piece and drops empty pieces.
std::vector<std::string> split_list(std::string_view s, char sep = ',');

/// Shortest decimal form that parses back to the same double.
std::string format_double(double v);
/// Fixed notation with `digits` decimals.
std::string format_fixed(double v, int digits);
/// Percentage with at most one decimal, trailing ".0" dropped: 0.4 -> "40%".
std::string format_percent(double ratio);

std::optional<double> parse_double(std::string_view s);
std::optional<std::int64_t> parse_int(std::string_view s);

std::uint64_t fnv1a64(std::string_view data);
std::string hex64(std::uint64_t v);

/// A line-oriented "key = value" document split into [sections].
/// Lines before the first section header belong to the unnamed section "".
struct Section {
    std::string name;
    std::size_t line = 0;
    std::vector<std::pair<std::string, std::string>> entries;
    std::vector<std::size_t> entry_lines;

    const std::string* find(std::string_view key) const;
    std::vector<std::string> all(std::string_view key) const;
};

std::vector<Section> parse_sections(std::string_view content);

} // namespace csm::text
