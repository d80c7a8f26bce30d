#pragma once

// Event and trace data model, the tab-separated log format, and the
// relevance classification of events.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace csm {

/// Names a protocol action ("A3", "1.20", "AC"). Non-empty, no whitespace,
/// none of the characters `,;|[]":` (they delimit the text formats).
using ActionId = std::string;
using StudentId = std::string;

enum class EventKind : std::uint8_t { Do, Try, Fail };

enum class ErrorClass : std::uint8_t { None, Dependency, Incompatibility, World, Other };

enum class Relevance : std::uint8_t { Correct, IrrelevantError, RelevantError, Ignored };

std::string_view to_string(EventKind k);
std::string_view to_string(ErrorClass c);
std::string_view to_string(Relevance r);
std::optional<EventKind> parse_event_kind(std::string_view s);
std::optional<ErrorClass> parse_error_class(std::string_view s);

bool is_valid_action_id(std::string_view id);
bool is_valid_student_id(std::string_view id);

struct EventRecord {
    StudentId student;
    std::int64_t seq = 0;
    std::optional<double> timestamp;
    EventKind kind = EventKind::Do;
    ActionId action;
    ErrorClass error_class = ErrorClass::None;
    /// A right action that repairs an earlier relevant error.
    bool corrective = false;

    friend bool operator==(const EventRecord&, const EventRecord&) = default;
};

/// Explicit completion marker written by the tutor when the assignment is
/// finished. In the log file it is a record of kind `end`.
struct Completion {
    std::int64_t seq = 0;
    std::optional<double> timestamp;

    friend bool operator==(const Completion&, const Completion&) = default;
};

struct StudentLog {
    StudentId student;
    std::vector<EventRecord> events;
    std::optional<Completion> completion;
    /// Seconds from the first event to completion. Absent for incomplete logs.
    std::optional<double> total_time;

    bool completed() const { return completion.has_value(); }

    /// Recomputes total_time from the events and completion marker.
    void refresh_total_time();

    friend bool operator==(const StudentLog&, const StudentLog&) = default;
};

/// Pedagogically irrelevant actions are either kept as right actions or
/// dropped before modelling.
struct RelevanceConfig {
    std::set<ActionId> irrelevant_actions;
    bool keep_irrelevant = false;
};

Relevance classify_relevance(const EventRecord& e, const RelevanceConfig& config = {});

/// Drops IGNORED events and rewrites kept irrelevant events as plain DOs.
StudentLog apply_relevance(const StudentLog& log, const RelevanceConfig& config);

/// Parses the line-delimited log format:
///   student \t seq \t timestamp \t kind \t action \t error_class \t corrective
/// `timestamp` may be `-`; kind `end` (action `-`) marks completion.
/// Logs come back in order of first appearance of each student.
std::vector<StudentLog> parse_logs(std::string_view content);

std::string serialize_logs(std::span<const StudentLog> logs);
std::string format_event_line(const EventRecord& e);

std::vector<StudentLog> read_log_file(const std::filesystem::path& path);

} // namespace csm
