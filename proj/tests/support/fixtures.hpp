#pragma once

// Hand-built cohorts shared by the unit and acceptance tests.

#include "csm/eventlog.hpp"

#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace fixtures {

/// "do 1", "fix 5", "try 3 dependency", "fail AC incompatibility".
inline csm::EventRecord event(const std::string& student, std::int64_t seq, const std::string& spec,
                              double base = 1.6e9) {
    std::istringstream in(spec);
    std::string kind, action, cls = "none";
    in >> kind >> action >> cls;
    csm::EventRecord e;
    e.student = student;
    e.seq = seq;
    e.timestamp = base + 10.0 * static_cast<double>(seq);
    e.action = action;
    e.error_class = *csm::parse_error_class(cls);
    if (kind == "fix") {
        e.kind = csm::EventKind::Do;
        e.corrective = true;
    } else {
        e.kind = *csm::parse_event_kind(kind);
    }
    return e;
}

inline csm::StudentLog make_log(const std::string& student, const std::vector<std::string>& specs, bool complete,
                                double base = 1.6e9) {
    csm::StudentLog log;
    log.student = student;
    std::int64_t seq = 1;
    for (const auto& s : specs) {
        log.events.push_back(event(student, seq++, s, base));
    }
    if (complete) {
        log.completion = csm::Completion{seq, base + 10.0 * static_cast<double>(seq)};
    }
    log.refresh_total_time();
    return log;
}

/// Three students: a clean run, a blocked attempt repeated once, and a
/// skipped step detected at the end.
inline std::vector<csm::StudentLog> tiny3() {
    return {
        make_log("s1", {"do A", "do B", "do C"}, true),
        make_log("s2", {"do A", "try C dependency", "try C dependency", "do B", "do C"}, true),
        make_log("s3", {"do A", "do C", "fail B dependency"}, false),
    };
}

/// 50 students whose counts reproduce the example graph of the
/// laboratory assignment: 40% try action 3 too early after action 1 (exit
/// vector 5/15/10/70%), 60% add the incompatible AC and later repair it,
/// and 70% forget action 5 before doing 6.
inline std::vector<csm::StudentLog> figure_cohort() {
    std::vector<csm::StudentLog> logs;
    int ac_seen = 0, plain_seen = 0, rest_seen = 0;
    for (int i = 0; i < 50; ++i) {
        char id[8];
        std::snprintf(id, sizeof id, "f%02d", i);
        std::vector<std::string> ev{"do 1"};
        if (i < 20) {
            const int extra = i == 0 ? 0 : i <= 3 ? 1 : i <= 5 ? 2 : 3;
            for (int r = 0; r <= extra; ++r) ev.push_back("try 3 dependency");
        }
        ev.push_back("do 2");
        const bool ac = i % 5 < 3;
        bool red5 = false;
        if (ac) {
            for (const char* s : {"do AC", "do 3", "fail AC incompatibility", "fix 3", "do 4"}) ev.push_back(s);
            red5 = ac_seen++ < 21;
        } else {
            ev.push_back("do 3");
            ev.push_back("do 4");
            red5 = plain_seen++ < 14;
        }
        bool complete = true;
        if (red5) {
            for (const char* s : {"do 6", "fail 5 dependency", "fix 5", "do 7"}) ev.push_back(s);
        } else if (rest_seen++ < 3) {
            for (const char* s : {"do 7", "fail 5 dependency", "fail 6 dependency"}) ev.push_back(s);
            complete = false;
        } else {
            for (const char* s : {"do 5", "do 6", "do 7"}) ev.push_back(s);
        }
        logs.push_back(make_log(id, ev, complete, 1.6e9 + 1000.0 * i));
    }
    return logs;
}

/// Random cohort for property tests: up to `max_students` students with up
/// to `max_events` events drawn from a small alphabet so that paths share
/// prefixes, repeat blocked attempts and repair errors.
inline std::vector<csm::StudentLog> random_cohort(std::mt19937_64& rng, int max_students = 15, int max_events = 40) {
    static const std::vector<std::string> actions{"1", "2", "3", "4", "AC"};
    static const std::vector<std::string> classes{"dependency", "incompatibility", "world", "other"};
    std::uniform_int_distribution<int> n_students(1, max_students);
    std::uniform_int_distribution<int> n_events(0, max_events);
    std::uniform_int_distribution<std::size_t> pick_action(0, actions.size() - 1);
    std::uniform_int_distribution<std::size_t> pick_class(0, classes.size() - 1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<csm::StudentLog> logs;
    const int n = n_students(rng);
    for (int i = 0; i < n; ++i) {
        std::vector<std::string> ev;
        const int m = n_events(rng);
        // A shared backbone keeps the automata from degenerating into trees.
        for (int j = 0; j < m; ++j) {
            const double r = u(rng);
            const std::string a = u(rng) < 0.7 ? actions[static_cast<std::size_t>(j) % 4] : actions[pick_action(rng)];
            if (r < 0.6) {
                ev.push_back("do " + a);
            } else if (r < 0.8) {
                const std::string t = "try " + a + " " + classes[pick_class(rng)];
                ev.push_back(t);
                while (u(rng) < 0.4) ev.push_back(t);
            } else if (r < 0.92) {
                ev.push_back("fail " + a + " " + classes[pick_class(rng)]);
            } else {
                ev.push_back("fix " + a);
            }
        }
        logs.push_back(make_log("r" + std::to_string(i), ev, u(rng) < 0.8, 1.6e9 + 1000.0 * i));
    }
    return logs;
}

} // namespace fixtures
