#pragma once

// Tutoring queries over one cluster automaton: next-event distribution,
// exact reach probabilities to relevant-error states, floundering risk and
// hint triggers.

#include "csm/automaton.hpp"

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace csm {

/// (state, relevant-error state) -> students who visit the first and later
/// the second, each student counted once per pair.
class ReachTable {
public:
    Count count(StateId from, StateId error) const;
    /// count / gamma(from).
    double probability(const ExtendedAutomaton& a, StateId from, StateId error) const;

    /// Adds (sign = +1) or removes (sign = -1) one student's replayed path.
    void apply_path(const ExtendedAutomaton& a, std::span<const PathStep> path, int sign);

    const std::map<std::pair<StateId, StateId>, Count>& entries() const { return counts_; }
    void set(StateId from, StateId error, Count n);
    /// Rewrites state ids (old -> new, -1 drops the entry).
    void remap(std::span<const std::int64_t> ids);

    friend bool operator==(const ReachTable&, const ReachTable&) = default;

private:
    std::map<std::pair<StateId, StateId>, Count> counts_;
};

/// Pairs (s, e) with s visited strictly before the error state e.
std::vector<std::pair<StateId, StateId>> reach_pairs(const ExtendedAutomaton& a, std::span<const PathStep> path);

/// Replays every member log. Throws IntegrityError when the logs do not
/// reproduce the automaton's state counts.
ReachTable compute_reach_table(const ExtendedAutomaton& a, std::span<const StudentLog> members);

struct NextEvent {
    EventSignature sig;
    TransitionId transition = 0;
    double confidence = 0.0;
};

/// One entry per outgoing transition, sorted by signature.
std::vector<NextEvent> next_distribution(const ExtendedAutomaton& a, StateId s);

/// Share of the students entering irrelevant-error state `s` who repeated
/// the blocked attempt at least `r` extra times before leaving. Throws
/// DomainError for other zones.
double flounder_risk(const ExtendedAutomaton& a, StateId s, Count r);

struct HintPolicy {
    double min_confidence = 0.5;
    double min_support = 0.0;
    double min_reach = 0.5;
    Count flounder_repeats = 3;
    double flounder_prob = 0.5;

    void validate() const;
};

enum class PredictionKind : std::uint8_t { Direct, Indirect, Flounder };
std::string_view to_string(PredictionKind k);

struct Prediction {
    StateId state = 0;
    PredictionKind kind = PredictionKind::Direct;
    EventSignature sig;
    double probability = 0.0;
    StateId target = 0;
    /// INDIRECT only: states of one most probable path from `state` to
    /// `target`, both included.
    std::vector<StateId> witness;
};

std::vector<Prediction> hint_triggers(const ExtendedAutomaton& a, const ReachTable& reach, const HintPolicy& policy);

/// Most probable path (product of confidences) between two states, or
/// empty when `to` is unreachable.
std::vector<StateId> most_probable_path(const ExtendedAutomaton& a, StateId from, StateId to);

/// Tab-separated table: state, kind, signature, probability, target, witness.
std::string render_predictions(const ExtendedAutomaton& a, std::span<const Prediction> predictions);

} // namespace csm
