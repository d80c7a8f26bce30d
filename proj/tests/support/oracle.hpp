#pragma once

// Brute-force reference implementations used by the tests. They share no
// code with the library beyond the plain log structs: situations are kept
// as strings, every quantity is recounted from the raw logs.

#include "csm/eventlog.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace oracle {

inline std::string sig_of(const csm::EventRecord& e) {
    std::string k = e.kind == csm::EventKind::Do ? (e.corrective ? "fix" : "do")
                    : e.kind == csm::EventKind::Try ? "try"
                                                    : "fail";
    return k + "/" + e.action + "/" + std::to_string(static_cast<int>(e.error_class));
}

struct Situation {
    std::multiset<std::string> done;
    std::vector<std::pair<std::string, std::string>> unrepaired; // (action, sig)
    std::vector<std::string> tries;
    std::string last; // "" for the initial situation
    bool last_is_try = false;

    std::string key() const {
        std::string s = "{";
        for (const auto& d : done) s += d + " ";
        s += "|";
        for (const auto& u : unrepaired) s += u.second + " ";
        s += "|";
        for (const auto& t : tries) s += t + " ";
        return s + "|" + last + "}";
    }

    /// 'w' correct, 'y' irrelevant error, 'r' relevant error, 'o' consequent.
    char zone() const {
        if (last.empty()) return 'w';
        if (last.rfind("try/", 0) == 0) return 'y';
        if (last.rfind("fail/", 0) == 0) return 'r';
        return unrepaired.empty() ? 'w' : 'o';
    }

    Situation after(const csm::EventRecord& e) const {
        Situation n;
        n.done = done;
        n.unrepaired = unrepaired;
        const std::string sig = sig_of(e);
        if (e.kind == csm::EventKind::Do) {
            if (!(e.corrective && done.count(e.action))) n.done.insert(e.action);
            if (e.corrective && !n.unrepaired.empty()) {
                bool hit = false;
                for (auto it = n.unrepaired.begin(); it != n.unrepaired.end();) {
                    if (it->first == e.action) {
                        it = n.unrepaired.erase(it);
                        hit = true;
                    } else {
                        ++it;
                    }
                }
                if (!hit) n.unrepaired.erase(n.unrepaired.begin());
            }
        } else if (e.kind == csm::EventKind::Try) {
            if (last_is_try) {
                n.tries = tries;
                n.tries.push_back(last);
            }
        } else {
            auto it = n.done.find(e.action);
            if (it != n.done.end()) n.done.erase(it);
            n.unrepaired.emplace_back(e.action, sig);
        }
        n.last = sig;
        n.last_is_try = e.kind == csm::EventKind::Try;
        return n;
    }
};

inline bool repeats(const csm::EventRecord& prev, const csm::EventRecord& e) {
    return prev.kind == csm::EventKind::Try && e.kind == csm::EventKind::Try && prev.action == e.action &&
           prev.error_class == e.error_class;
}

/// One folded step of a trace.
struct Step {
    std::string src, sig, dst;
    char src_zone = 'w';
    /// Extra repeats of the attempt that entered `src` (vector index).
    long index = 0;
};

struct Trace {
    std::vector<std::string> keys; // keys[0] is the initial situation
    std::vector<char> zones;
    std::vector<Step> steps;
};

/// Extra repeats that follow each folded step.
inline std::vector<long> repeat_runs(const csm::StudentLog& log) {
    std::vector<long> extra;
    for (std::size_t i = 0; i < log.events.size(); ++i) {
        if (i > 0 && repeats(log.events[i - 1], log.events[i])) {
            ++extra.back();
        } else {
            extra.push_back(0);
        }
    }
    return extra;
}

inline Trace trace_of(const csm::StudentLog& log) {
    Trace t;
    const auto extra = repeat_runs(log);
    Situation cur;
    t.keys.push_back(cur.key());
    t.zones.push_back(cur.zone());
    for (std::size_t i = 0; i < log.events.size(); ++i) {
        const auto& e = log.events[i];
        if (i > 0 && repeats(log.events[i - 1], e)) continue;
        Situation next = cur.after(e);
        const std::size_t k = t.steps.size();
        const long index = cur.zone() == 'y' && k > 0 ? extra[k - 1] : 0;
        t.steps.push_back({cur.key(), sig_of(e), next.key(), cur.zone(), index});
        cur = std::move(next);
        t.keys.push_back(cur.key());
        t.zones.push_back(cur.zone());
    }
    return t;
}

struct Counts {
    long cohort = 0;
    std::map<std::string, long> gamma;
    std::map<std::string, char> zone;
    std::map<std::pair<std::string, std::string>, long> phi;
    std::map<std::pair<std::string, std::string>, std::vector<long>> phi_vec;
    std::map<std::pair<std::string, std::string>, std::string> dst;
    std::map<std::pair<std::string, std::string>, long> reach;

    double support(const std::string& k) const { return double(gamma.at(k)) / double(cohort); }
    long frequency(const std::pair<std::string, std::string>& t) const {
        if (phi.count(t)) return phi.at(t);
        long n = 0;
        for (long v : phi_vec.at(t)) n += v;
        return n;
    }
    double confidence(const std::pair<std::string, std::string>& t) const {
        return double(frequency(t)) / double(gamma.at(t.first));
    }
};

inline Counts count(const std::vector<csm::StudentLog>& logs) {
    Counts c;
    c.cohort = static_cast<long>(logs.size());
    for (const auto& log : logs) {
        const Trace t = trace_of(log);
        std::set<std::string> states(t.keys.begin(), t.keys.end());
        for (const auto& s : states) ++c.gamma[s];
        for (std::size_t i = 0; i < t.keys.size(); ++i) c.zone[t.keys[i]] = t.zones[i];
        std::set<std::pair<std::string, std::string>> taken;
        for (const auto& st : t.steps) {
            const std::pair<std::string, std::string> id{st.src, st.sig};
            c.dst[id] = st.dst;
            if (!taken.insert(id).second) continue;
            if (st.src_zone == 'y') {
                const long idx = st.index;
                auto& v = c.phi_vec[id];
                if (static_cast<long>(v.size()) <= idx) v.resize(static_cast<std::size_t>(idx) + 1, 0);
                ++v[static_cast<std::size_t>(idx)];
            } else {
                ++c.phi[id];
            }
        }
        std::set<std::pair<std::string, std::string>> pairs;
        for (std::size_t j = 0; j < t.keys.size(); ++j) {
            for (std::size_t i = 0; i < j; ++i) {
                if (t.keys[i] != t.keys[j] && t.zones[j] == 'r') pairs.insert({t.keys[i], t.keys[j]});
            }
        }
        for (const auto& p : pairs) ++c.reach[p];
    }
    return c;
}

/// Direct alignment of test logs against the counts of a single-cluster
/// model: per event error, then the student-weighted mean over distinct
/// events.
struct Alignment {
    std::vector<double> errors;
    std::vector<std::string> events;
};

inline Alignment align(const Counts& model, const csm::StudentLog& log, double min_support, double min_confidence) {
    Alignment out;
    const auto extra = repeat_runs(log);
    Situation cur;
    std::string previous = cur.key();
    bool previous_in_model = true;
    std::size_t step = 0;
    for (std::size_t i = 0; i < log.events.size(); ++i) {
        if (i > 0 && repeats(log.events[i - 1], log.events[i])) continue;
        const auto& e = log.events[i];
        const char src_zone = cur.zone();
        Situation next = cur.after(e);
        const std::string state = next.key();
        const std::string sig = sig_of(e);
        double err = 1.0;
        std::string branch = "none";
        if (model.gamma.count(state)) {
            const std::pair<std::string, std::string> t{previous, sig};
            const bool exists = previous_in_model && model.dst.count(t) && model.dst.at(t) == state &&
                                model.frequency(t) > 0;
            if (exists) {
                const long idx = step == 0 ? 0 : extra[step - 1];
                if (src_zone != 'y') {
                    branch = "n";
                } else {
                    branch = idx == 0 ? "v1" : "vk";
                }
                if (model.support(state) >= min_support && model.confidence(t) >= min_confidence) {
                    double f = 0;
                    if (branch == "n") {
                        f = double(model.phi.at(t));
                    } else {
                        const auto& v = model.phi_vec.at(t);
                        if (branch == "v1") {
                            f = v.empty() ? 0 : double(v[0]);
                        } else {
                            for (std::size_t k = 1; k < v.size(); ++k) f += double(v[k]);
                        }
                    }
                    err = 1.0 - f / double(model.gamma.at(previous));
                } else {
                    err = 0.0;
                }
            }
            previous_in_model = true;
        } else {
            previous_in_model = false;
        }
        out.errors.push_back(err);
        out.events.push_back(previous + "#" + sig + "#" + branch);
        previous = state;
        cur = std::move(next);
        ++step;
    }
    return out;
}

inline double mean_over(const std::vector<Alignment>& results, const std::vector<std::string>& students) {
    std::map<std::string, std::pair<double, std::set<std::string>>> events;
    for (std::size_t i = 0; i < results.size(); ++i) {
        for (std::size_t j = 0; j < results[i].errors.size(); ++j) {
            auto& slot = events[results[i].events[j]];
            slot.first = results[i].errors[j];
            slot.second.insert(students[i]);
        }
    }
    double num = 0, den = 0;
    for (const auto& [_, v] : events) {
        num += v.first * double(v.second.size());
        den += double(v.second.size());
    }
    return num / den;
}

} // namespace oracle
