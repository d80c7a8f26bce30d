#include "csm/automaton.hpp"

#include "csm/error.hpp"

#include <algorithm>
#include <deque>
#include <map>
#include <numeric>

namespace csm {

Count Transition::frequency() const {
    if (!is_vector) {
        return phi;
    }
    return std::accumulate(phi_vec.begin(), phi_vec.end(), Count{0});
}

ExtendedAutomaton::ExtendedAutomaton() { add_state(SituationKey{}); }

const State& ExtendedAutomaton::state(StateId s) const {
    if (!has_state(s)) {
        throw DomainError("no state " + std::to_string(s));
    }
    return states_[s];
}

const Transition& ExtendedAutomaton::transition(TransitionId t) const {
    if (!has_transition(t)) {
        throw DomainError("no transition " + std::to_string(t));
    }
    return transitions_[t];
}

std::vector<StateId> ExtendedAutomaton::states() const {
    std::vector<StateId> ids;
    ids.reserve(live_states_);
    for (StateId s = 0; s < states_.size(); ++s) {
        if (states_[s].alive) {
            ids.push_back(s);
        }
    }
    return ids;
}

std::vector<TransitionId> ExtendedAutomaton::transitions() const {
    std::vector<TransitionId> ids;
    ids.reserve(live_transitions_);
    for (TransitionId t = 0; t < transitions_.size(); ++t) {
        if (transitions_[t].alive) {
            ids.push_back(t);
        }
    }
    return ids;
}

std::optional<StateId> ExtendedAutomaton::find(const SituationKey& key) const {
    const auto it = index_.find(key.encode());
    if (it == index_.end()) {
        return std::nullopt;
    }
    return it->second;
}

std::optional<TransitionId> ExtendedAutomaton::find_transition(StateId src, const EventSignature& sig) const {
    for (const TransitionId t : state(src).out) {
        if (transitions_[t].sig == sig) {
            return t;
        }
    }
    return std::nullopt;
}

StateId ExtendedAutomaton::add_state(SituationKey key) {
    const auto id = static_cast<StateId>(states_.size());
    index_.emplace(key.encode(), id);
    State s;
    s.zone = zone_of(key);
    s.key = std::move(key);
    states_.push_back(std::move(s));
    ++live_states_;
    return id;
}

TransitionId ExtendedAutomaton::add_transition(StateId src, StateId dst, EventSignature sig) {
    const auto id = static_cast<TransitionId>(transitions_.size());
    Transition t;
    t.src = src;
    t.dst = dst;
    t.sig = std::move(sig);
    t.is_vector = states_[src].zone == Zone::IrrelevantError;
    transitions_.push_back(std::move(t));
    states_[src].out.push_back(id);
    ++live_transitions_;
    return id;
}

void ExtendedAutomaton::kill_transition(TransitionId t) {
    auto& tr = transitions_[t];
    tr.alive = false;
    std::erase(states_[tr.src].out, t);
    --live_transitions_;
}

void ExtendedAutomaton::begin_student(StudentVisits* visits) {
    ++cohort_size_;
    ++states_[initial_state].gamma;
    if (visits) {
        visits->states.insert(initial_state);
    }
}

StateId ExtendedAutomaton::add_event(StateId current, const EventRecord& e, Count repeat_run,
                                     StudentVisits* visits) {
    const auto sig = EventSignature::of(e);
    StateId dst = 0;
    auto t = find_transition(current, sig);
    if (t) {
        dst = transitions_[*t].dst;
    } else {
        auto key = successor(states_[current].key, e);
        const auto existing = index_.find(key.encode());
        dst = existing != index_.end() ? existing->second : add_state(std::move(key));
        t = add_transition(current, dst, sig);
    }

    if (!visits || visits->states.insert(dst).second) {
        ++states_[dst].gamma;
    }
    if (!visits || visits->transitions.insert(*t).second) {
        auto& tr = transitions_[*t];
        if (tr.is_vector) {
            const auto i = static_cast<std::size_t>(std::max<Count>(repeat_run, 0));
            if (tr.phi_vec.size() <= i) {
                tr.phi_vec.resize(i + 1, 0);
            }
            ++tr.phi_vec[i];
        } else {
            ++tr.phi;
        }
    }
    return dst;
}

void ExtendedAutomaton::apply_log(const StudentLog& log) {
    StudentVisits visits;
    begin_student(&visits);
    StateId current = initial_state;
    Count repeats = 0;
    for (const auto& step : fold_repeats(log.events)) {
        current = add_event(current, step.event, repeats, &visits);
        repeats = step.extra_repeats;
    }
}

std::vector<PathStep> ExtendedAutomaton::replay(std::span<const EventRecord> events) const {
    std::vector<PathStep> path;
    StateId current = initial_state;
    Count repeats = 0;
    for (const auto& step : fold_repeats(events)) {
        const auto t = find_transition(current, EventSignature::of(step.event));
        if (!t) {
            throw IntegrityError("student '" + step.event.student + "': no transition for '" +
                                 EventSignature::of(step.event).label() + "' (seq " +
                                 std::to_string(step.event.seq) + ")");
        }
        const auto& tr = transitions_[*t];
        path.push_back({*t, tr.dst, tr.is_vector ? repeats : 0});
        current = tr.dst;
        repeats = step.extra_repeats;
    }
    return path;
}

void ExtendedAutomaton::remove_log(const StudentLog& log) {
    if (cohort_size_ <= 0) {
        throw IntegrityError("student '" + log.student + "': automaton has no students to remove");
    }
    const auto path = replay(log.events);

    // Distinct states and first traversal of each transition, exactly as
    // apply_log counted them.
    std::vector<StateId> visited{initial_state};
    std::vector<std::pair<TransitionId, Count>> taken;
    {
        StudentVisits seen;
        seen.states.insert(initial_state);
        for (const auto& step : path) {
            if (seen.states.insert(step.state).second) {
                visited.push_back(step.state);
            }
            if (seen.transitions.insert(step.via).second) {
                taken.emplace_back(step.via, step.index);
            }
        }
    }

    for (const StateId s : visited) {
        if (states_[s].gamma < 1) {
            throw IntegrityError("student '" + log.student + "': state count would go below zero");
        }
    }
    for (const auto& [t, i] : taken) {
        const auto& tr = transitions_[t];
        const Count have = tr.is_vector ? (static_cast<std::size_t>(i) < tr.phi_vec.size() ? tr.phi_vec[i] : 0)
                                        : tr.phi;
        if (have < 1) {
            throw IntegrityError("student '" + log.student + "': transition count would go below zero");
        }
    }

    --cohort_size_;
    for (const auto& [t, i] : taken) {
        auto& tr = transitions_[t];
        if (tr.is_vector) {
            --tr.phi_vec[i];
            while (!tr.phi_vec.empty() && tr.phi_vec.back() == 0) {
                tr.phi_vec.pop_back();
            }
        } else {
            --tr.phi;
        }
        if (tr.frequency() == 0) {
            kill_transition(t);
        }
    }
    for (const StateId s : visited) {
        auto& st = states_[s];
        --st.gamma;
        if (st.gamma == 0 && s != initial_state) {
            st.alive = false;
            index_.erase(st.key.encode());
            --live_states_;
        }
    }
}

std::vector<StateId> ExtendedAutomaton::canonical_order() const {
    std::vector<StateId> order;
    std::vector<char> seen(states_.size(), 0);
    std::deque<StateId> queue{initial_state};
    seen[initial_state] = 1;
    while (!queue.empty()) {
        const StateId s = queue.front();
        queue.pop_front();
        order.push_back(s);
        auto out = states_[s].out;
        std::sort(out.begin(), out.end(),
                  [&](TransitionId a, TransitionId b) { return transitions_[a].sig < transitions_[b].sig; });
        for (const TransitionId t : out) {
            const StateId d = transitions_[t].dst;
            if (!seen[d]) {
                seen[d] = 1;
                queue.push_back(d);
            }
        }
    }
    // Unreachable live states cannot come from apply/remove, but keep them
    // rather than lose data; order them by key.
    std::vector<StateId> rest;
    for (StateId s = 0; s < states_.size(); ++s) {
        if (states_[s].alive && !seen[s]) {
            rest.push_back(s);
        }
    }
    std::sort(rest.begin(), rest.end(), [&](StateId a, StateId b) { return states_[a].key < states_[b].key; });
    order.insert(order.end(), rest.begin(), rest.end());
    return order;
}

std::vector<std::int64_t> ExtendedAutomaton::canonical_state_ids() const {
    std::vector<std::int64_t> ids(states_.size(), -1);
    const auto order = canonical_order();
    for (std::size_t i = 0; i < order.size(); ++i) {
        ids[order[i]] = static_cast<std::int64_t>(i);
    }
    return ids;
}

void ExtendedAutomaton::canonicalize() {
    const auto order = canonical_order();
    const auto ids = canonical_state_ids();

    std::vector<TransitionId> live = transitions();
    std::sort(live.begin(), live.end(), [&](TransitionId a, TransitionId b) {
        const auto& ta = transitions_[a];
        const auto& tb = transitions_[b];
        if (ids[ta.src] != ids[tb.src]) {
            return ids[ta.src] < ids[tb.src];
        }
        return ta.sig < tb.sig;
    });

    std::vector<State> states;
    states.reserve(order.size());
    for (const StateId s : order) {
        states.push_back(std::move(states_[s]));
        states.back().out.clear();
    }
    std::vector<Transition> transitions;
    transitions.reserve(live.size());
    for (const TransitionId t : live) {
        auto tr = std::move(transitions_[t]);
        tr.src = static_cast<StateId>(ids[tr.src]);
        tr.dst = static_cast<StateId>(ids[tr.dst]);
        states[tr.src].out.push_back(static_cast<TransitionId>(transitions.size()));
        transitions.push_back(std::move(tr));
    }

    states_ = std::move(states);
    transitions_ = std::move(transitions);
    index_.clear();
    for (StateId s = 0; s < states_.size(); ++s) {
        index_.emplace(states_[s].key.encode(), s);
    }
    live_states_ = states_.size();
    live_transitions_ = transitions_.size();
}

namespace {

std::string join_counts(const std::vector<Count>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) {
            s += ',';
        }
        s += std::to_string(v[i]);
    }
    return s;
}

} // namespace

std::string ExtendedAutomaton::serialize() const {
    const auto ids = canonical_state_ids();
    const auto order = canonical_order();

    std::string out = "cohort_size = " + std::to_string(cohort_size_) + "\n";
    for (std::size_t i = 0; i < order.size(); ++i) {
        const auto& st = states_[order[i]];
        out += "state = " + std::to_string(i) + ' ' + std::string(to_string(st.zone)) + ' ' +
               std::to_string(st.gamma) + ' ' + st.key.encode() + '\n';
    }
    for (const StateId s : order) {
        auto out_edges = states_[s].out;
        std::sort(out_edges.begin(), out_edges.end(),
                  [&](TransitionId a, TransitionId b) { return transitions_[a].sig < transitions_[b].sig; });
        for (const TransitionId t : out_edges) {
            const auto& tr = transitions_[t];
            out += tr.is_vector ? "vector = " : "normal = ";
            out += std::to_string(ids[tr.src]) + ' ' + std::to_string(ids[tr.dst]) + ' ' + tr.sig.encode() + ' ';
            out += tr.is_vector ? join_counts(tr.phi_vec) : std::to_string(tr.phi);
            out += '\n';
        }
    }
    return out;
}

ExtendedAutomaton ExtendedAutomaton::deserialize(const text::Section& section) {
    ExtendedAutomaton a;
    a.states_.clear();
    a.index_.clear();
    a.live_states_ = 0;
    bool have_cohort = false;

    for (std::size_t i = 0; i < section.entries.size(); ++i) {
        const auto& [key, value] = section.entries[i];
        const auto where = [&] { return "line " + std::to_string(section.entry_lines[i]) + ": "; };
        const auto fields = text::split(value, ' ');

        if (key == "cohort_size") {
            const auto n = text::parse_int(value);
            if (!n || *n < 0) {
                throw LoadError(where() + "bad cohort_size");
            }
            a.cohort_size_ = *n;
            have_cohort = true;
        } else if (key == "state") {
            if (fields.size() != 4) {
                throw LoadError(where() + "state needs: id zone gamma key");
            }
            const auto id = text::parse_int(fields[0]);
            const auto zone = parse_zone(fields[1]);
            const auto gamma = text::parse_int(fields[2]);
            auto skey = SituationKey::decode(fields[3]);
            if (!id || *id != static_cast<std::int64_t>(a.states_.size()) || !zone || !gamma || *gamma < 0 ||
                !skey) {
                throw LoadError(where() + "malformed state");
            }
            if (*zone != zone_of(*skey) || a.index_.contains(skey->encode()) ||
                (a.states_.empty() != skey->is_initial())) {
                throw LoadError(where() + "inconsistent state");
            }
            const StateId s = a.add_state(std::move(*skey));
            a.states_[s].gamma = *gamma;
        } else if (key == "normal" || key == "vector") {
            if (fields.size() != 4) {
                throw LoadError(where() + "transition needs: src dst signature counts");
            }
            const auto src = text::parse_int(fields[0]);
            const auto dst = text::parse_int(fields[1]);
            auto sig = EventSignature::decode(fields[2]);
            const auto n = static_cast<std::int64_t>(a.states_.size());
            if (!src || !dst || !sig || *src < 0 || *src >= n || *dst < 0 || *dst >= n) {
                throw LoadError(where() + "malformed transition");
            }
            const auto s = static_cast<StateId>(*src);
            const auto d = static_cast<StateId>(*dst);
            const EventRecord probe{{}, 0, std::nullopt, sig->kind, sig->action, sig->error_class, sig->corrective};
            if (a.find_transition(s, *sig) || successor(a.states_[s].key, probe) != a.states_[d].key) {
                throw LoadError(where() + "inconsistent transition");
            }
            const TransitionId t = a.add_transition(s, d, std::move(*sig));
            auto& tr = a.transitions_[t];
            if (tr.is_vector != (key == "vector")) {
                throw LoadError(where() + "vector transitions must leave irrelevant-error states");
            }
            if (tr.is_vector) {
                for (auto part : text::split(fields[3], ',')) {
                    const auto c = text::parse_int(part);
                    if (!c || *c < 0) {
                        throw LoadError(where() + "bad frequency vector");
                    }
                    tr.phi_vec.push_back(*c);
                }
                if (tr.phi_vec.empty() || tr.phi_vec.back() == 0) {
                    throw LoadError(where() + "bad frequency vector");
                }
            } else {
                const auto c = text::parse_int(fields[3]);
                if (!c || *c < 1) {
                    throw LoadError(where() + "bad frequency");
                }
                tr.phi = *c;
            }
        } else {
            throw LoadError(where() + "unknown automaton field '" + key + "'");
        }
    }
    if (!have_cohort || a.states_.empty()) {
        throw LoadError("automaton section '" + section.name + "' is incomplete");
    }
    if (a.states_[initial_state].gamma != a.cohort_size_) {
        throw LoadError("automaton section '" + section.name + "': initial count differs from cohort size");
    }
    a.canonicalize();
    return a;
}

ExtendedAutomaton build_automaton(std::span<const StudentLog> logs) {
    ExtendedAutomaton a;
    for (const auto& log : logs) {
        a.apply_log(log);
    }
    a.canonicalize();
    return a;
}

double support(const ExtendedAutomaton& a, StateId s) {
    const auto& st = a.state(s);
    if (a.cohort_size() == 0) {
        throw UndefinedValueError("support of a state in an empty automaton");
    }
    return static_cast<double>(st.gamma) / static_cast<double>(a.cohort_size());
}

double confidence(const ExtendedAutomaton& a, TransitionId t) {
    const auto& tr = a.transition(t);
    const auto gamma = a.state(tr.src).gamma;
    if (gamma == 0) {
        throw UndefinedValueError("confidence out of a state nobody visited");
    }
    return static_cast<double>(tr.frequency()) / static_cast<double>(gamma);
}

std::string describe_state(const ExtendedAutomaton& a, StateId s) {
    const auto& st = a.state(s);
    return st.key.is_initial() ? std::string("s0") : st.key.last->label();
}

namespace {

std::string_view fill_color(Zone z) {
    switch (z) {
    case Zone::Correct: return "white";
    case Zone::IrrelevantError: return "yellow";
    case Zone::RelevantError: return "red";
    case Zone::ConsequentError: return "orange";
    }
    return "white";
}

std::string escape(std::string_view s) {
    std::string out;
    for (const char c : s) {
        if (c == '\\' || c == '"') {
            out += '\\';
        }
        out += c;
    }
    return out;
}

} // namespace

std::string export_dot(const ExtendedAutomaton& a) {
    const auto ids = a.canonical_state_ids();
    std::vector<StateId> order(a.state_count());
    for (StateId s = 0; s < ids.size(); ++s) {
        if (ids[s] >= 0) {
            order[static_cast<std::size_t>(ids[s])] = s;
        }
    }
    const bool empty = a.cohort_size() == 0;

    std::string out = "digraph automaton {\n";
    out += "  rankdir=LR;\n";
    out += "  node [shape=ellipse, style=filled, fontname=\"Helvetica\"];\n";
    for (std::size_t i = 0; i < order.size(); ++i) {
        const auto& st = a.state(order[i]);
        out += "  s" + std::to_string(i) + " [label=\"" + escape(describe_state(a, order[i]));
        if (!empty) {
            out += "\\n" + text::format_percent(support(a, order[i]));
        }
        out += "\", fillcolor=" + std::string(fill_color(st.zone)) + "];\n";
    }
    for (std::size_t i = 0; i < order.size(); ++i) {
        auto out_edges = a.state(order[i]).out;
        std::sort(out_edges.begin(), out_edges.end(),
                  [&](TransitionId x, TransitionId y) { return a.transition(x).sig < a.transition(y).sig; });
        for (const TransitionId t : out_edges) {
            const auto& tr = a.transition(t);
            std::string label = escape(tr.sig.label()) + " / ";
            if (tr.is_vector) {
                const auto gamma = static_cast<double>(a.state(tr.src).gamma);
                label += '[';
                for (std::size_t k = 0; k < tr.phi_vec.size(); ++k) {
                    if (k) {
                        label += ", ";
                    }
                    label += text::format_percent(static_cast<double>(tr.phi_vec[k]) / gamma);
                }
                label += ']';
            } else {
                label += text::format_percent(confidence(a, t));
            }
            out += "  s" + std::to_string(i) + " -> s" + std::to_string(ids[tr.dst]) + " [label=\"" + label +
                   "\"];\n";
        }
    }
    out += "}\n";
    return out;
}

} // namespace csm
