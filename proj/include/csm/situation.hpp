#pragma once

// State identity for the extended automaton.
//
// A situation is (completed actions, unrepaired relevant errors, the current
// run of blocked attempts, last event). Two students are in the same state
// exactly when their situations are equal.

#include "csm/eventlog.hpp"

#include <compare>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace csm {

enum class Zone : std::uint8_t { Correct, IrrelevantError, RelevantError, ConsequentError };

std::string_view to_string(Zone z);
std::optional<Zone> parse_zone(std::string_view s);

struct EventSignature {
    EventKind kind = EventKind::Do;
    ActionId action;
    ErrorClass error_class = ErrorClass::None;
    /// Corrective DOs are their own event type ("fix 5"), so one state never
    /// has two outgoing transitions for the same signature.
    bool corrective = false;

    static EventSignature of(const EventRecord& e) { return {e.kind, e.action, e.error_class, e.corrective}; }

    /// "try 3", "fail AC", "fix 5" -- the label used in graphs and reports.
    std::string label() const;
    /// "try:3:dependency", "fix:5:none" -- lossless, used in the text formats.
    std::string encode() const;
    static std::optional<EventSignature> decode(std::string_view s);

    auto operator<=>(const EventSignature&) const = default;
    bool operator==(const EventSignature&) const = default;
};

struct SituationKey {
    /// Correctly completed actions, sorted (a multiset).
    std::vector<ActionId> done;
    /// Relevant errors not yet repaired, in the order they happened.
    std::vector<EventSignature> unrepaired;
    /// Earlier distinct attempts of the current run of blocked attempts.
    std::vector<EventSignature> tries;
    /// Most recent event; empty only for the initial situation.
    std::optional<EventSignature> last;

    bool is_initial() const { return !last.has_value(); }

    std::string encode() const;
    static std::optional<SituationKey> decode(std::string_view s);

    auto operator<=>(const SituationKey&) const = default;
    bool operator==(const SituationKey&) const = default;
};

/// The situation reached from `from` by event `e`.
///
///  - DO adds the action to `done`. A corrective DO does not add an action
///    that is already done; it repairs the unrepaired errors on the same
///    action, or the oldest one when none matches.
///  - TRY extends the run of blocked attempts (callers fold consecutive
///    identical attempts into one visit before calling this).
///  - FAIL withdraws one completion of the failed action and records the
///    error as unrepaired.
SituationKey successor(const SituationKey& from, const EventRecord& e);

/// DO -> CORRECT (CONSEQUENT_ERROR while errors are unrepaired),
/// TRY -> IRRELEVANT_ERROR, FAIL -> RELEVANT_ERROR.
Zone zone_of(const SituationKey& key);

/// One step of a trace after folding repeats: `extra_repeats` counts the
/// identical blocked attempts that immediately followed this TRY.
struct TraceStep {
    EventRecord event;
    std::int64_t extra_repeats = 0;
};

std::vector<TraceStep> fold_repeats(std::span<const EventRecord> events);

/// True when `e` repeats the blocked attempt `previous`.
bool is_repeat(const EventRecord& previous, const EventRecord& e);

} // namespace csm
