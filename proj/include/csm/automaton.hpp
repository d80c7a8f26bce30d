#pragma once

// The extended automaton: zoned states keyed by situation, normal and
// vector transitions, and per-student frequencies.

#include "csm/situation.hpp"
#include "csm/text.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace csm {

using StateId = std::uint32_t;
using TransitionId = std::uint32_t;
using Count = std::int64_t;

inline constexpr StateId initial_state = 0;

struct State {
    SituationKey key;
    Zone zone = Zone::Correct;
    /// Students whose trace visits this state at least once.
    Count gamma = 0;
    std::vector<TransitionId> out;
    bool alive = true;
};

struct Transition {
    StateId src = 0;
    StateId dst = 0;
    EventSignature sig;
    /// Exit of an irrelevant-error state: frequencies indexed by how many
    /// extra times the blocked attempt was repeated before leaving.
    bool is_vector = false;
    Count phi = 0;
    std::vector<Count> phi_vec;
    bool alive = true;

    Count frequency() const;
};

/// What one student has already been counted in, so revisits do not
/// count twice.
struct StudentVisits {
    std::unordered_set<StateId> states;
    std::unordered_set<TransitionId> transitions;
};

/// One step of a replayed trace: the transition taken, the state reached,
/// and the vector index used (0 for normal transitions).
struct PathStep {
    TransitionId via = 0;
    StateId state = 0;
    Count index = 0;
};

class ExtendedAutomaton {
public:
    ExtendedAutomaton();

    Count cohort_size() const { return cohort_size_; }
    std::size_t state_count() const { return live_states_; }
    std::size_t transition_count() const { return live_transitions_; }

    bool has_state(StateId s) const { return s < states_.size() && states_[s].alive; }
    bool has_transition(TransitionId t) const { return t < transitions_.size() && transitions_[t].alive; }
    /// Throws DomainError for unknown or removed ids.
    const State& state(StateId s) const;
    const Transition& transition(TransitionId t) const;

    /// Live ids in ascending order.
    std::vector<StateId> states() const;
    std::vector<TransitionId> transitions() const;
    /// Upper bound on ids ever handed out (for id-indexed side tables).
    std::size_t state_capacity() const { return states_.size(); }

    std::optional<StateId> find(const SituationKey& key) const;
    std::optional<TransitionId> find_transition(StateId src, const EventSignature& sig) const;

    /// Counts a new student at s0.
    void begin_student(StudentVisits* visits = nullptr);
    /// Moves from `current` along `e`, creating the state and transition
    /// when needed. `repeat_run` is the number of extra repeats of the
    /// blocked attempt at `current` and selects the vector index. With
    /// `visits`, counts only the first time this student reaches a state
    /// or transition.
    StateId add_event(StateId current, const EventRecord& e, Count repeat_run, StudentVisits* visits = nullptr);
    void apply_log(const StudentLog& log);
    /// Exact inverse of apply_log. Throws IntegrityError, leaving the
    /// automaton untouched, when the log was not applied here.
    void remove_log(const StudentLog& log);

    /// Replays a trace without mutating. Throws IntegrityError at the
    /// first event with no matching transition.
    std::vector<PathStep> replay(std::span<const EventRecord> events) const;

    /// Renumbers states and transitions in canonical order and drops
    /// removed entries. Invalidates ids held by callers.
    void canonicalize();
    /// Old id -> canonical id (-1 for removed states).
    std::vector<std::int64_t> canonical_state_ids() const;

    /// key = value lines: cohort_size, state, normal, vector. Always in
    /// canonical order, whatever the current ids are.
    std::string serialize() const;
    static ExtendedAutomaton deserialize(const text::Section& section);

private:
    StateId add_state(SituationKey key);
    TransitionId add_transition(StateId src, StateId dst, EventSignature sig);
    void kill_transition(TransitionId t);
    std::vector<StateId> canonical_order() const;

    std::vector<State> states_;
    std::vector<Transition> transitions_;
    std::unordered_map<std::string, StateId> index_;
    Count cohort_size_ = 0;
    std::size_t live_states_ = 0;
    std::size_t live_transitions_ = 0;
};

/// Builds from scratch and canonicalizes; independent of log order.
ExtendedAutomaton build_automaton(std::span<const StudentLog> logs);

/// gamma(s) / cohort_size. Throws UndefinedValueError for an empty cohort.
double support(const ExtendedAutomaton& a, StateId s);
/// frequency(t) / gamma(src).
double confidence(const ExtendedAutomaton& a, TransitionId t);

/// Graphviz text: zone colors, support % on states, confidence % (or the
/// percentage vector) on edges.
std::string export_dot(const ExtendedAutomaton& a);

/// Short display name of a state: "s0" or "<zone> <last event label>".
std::string describe_state(const ExtendedAutomaton& a, StateId s);

} // namespace csm
