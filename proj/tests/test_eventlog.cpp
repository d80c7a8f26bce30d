#include "csm/error.hpp"
#include "csm/eventlog.hpp"
#include "csm/generator.hpp"
#include "support/fixtures.hpp"

#include <doctest.h>

using namespace csm;

TEST_CASE("parse_logs keeps one sorted log per student") {
    const auto logs = parse_logs("s1\t1\t10\tdo\tA\tnone\t0\n"
                                 "s1\t2\t20\tdo\tB\tnone\t0\n"
                                 "s1\t3\t30\tdo\tC\tnone\t0\n");
    REQUIRE(logs.size() == 1);
    CHECK(logs[0].student == "s1");
    REQUIRE(logs[0].events.size() == 3);
    CHECK(logs[0].events[2].action == "C");
    CHECK_FALSE(logs[0].total_time.has_value());
}

TEST_CASE("parse_logs partitions interleaved students") {
    const auto logs = parse_logs("# comment\n"
                                 "s1\t1\t10\tdo\tA\tnone\t0\n"
                                 "s2\t1\t11\ttry\tB\tdependency\t0\n"
                                 "s1\t2\t20\tdo\tB\tnone\t0\n"
                                 "s2\t2\t21\tfail\tA\tdependency\t0\n"
                                 "s1\t3\t50\tend\t-\tnone\t0\n");
    REQUIRE(logs.size() == 2);
    CHECK(logs[0].events.size() == 2);
    CHECK(logs[1].events.size() == 2);
    CHECK(logs[0].completed());
    REQUIRE(logs[0].total_time.has_value());
    CHECK(*logs[0].total_time == doctest::Approx(40.0));
    CHECK_FALSE(logs[1].completed());
}

TEST_CASE("parse_logs rejects decreasing sequence numbers and malformed lines") {
    CHECK_THROWS_AS(parse_logs("s1\t5\t10\tdo\tA\tnone\t0\ns1\t4\t11\tdo\tB\tnone\t0\n"), IntegrityError);
    CHECK_THROWS_AS(parse_logs("s1\t1\t10\tjump\tA\tnone\t0\n"), ParseError);
    CHECK_THROWS_AS(parse_logs("s1\t1\t10\tdo\tA\n"), ParseError);
    try {
        parse_logs("s1\t1\t10\tdo\tA\tnone\t0\nbad line\n");
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find('2') != std::string::npos);
    }
}

TEST_CASE("log format round-trips") {
    const auto fixture = fixtures::figure_cohort();
    const auto text = serialize_logs(fixture);
    const auto parsed = parse_logs(text);
    CHECK(parsed == fixture);
    CHECK(serialize_logs(parsed) == text);
}

TEST_CASE("relevance classification") {
    const auto e = [](const char* spec) { return fixtures::event("s", 1, spec); };
    CHECK(classify_relevance(e("do A2")) == Relevance::Correct);
    CHECK(classify_relevance(e("try A3 dependency")) == Relevance::IrrelevantError);
    CHECK(classify_relevance(e("fail A5 dependency")) == Relevance::RelevantError);

    RelevanceConfig drop;
    drop.irrelevant_actions = {"look"};
    CHECK(classify_relevance(e("do look"), drop) == Relevance::Ignored);
    RelevanceConfig keep = drop;
    keep.keep_irrelevant = true;
    CHECK(classify_relevance(e("try look other"), keep) == Relevance::Correct);

    const auto log = fixtures::make_log("s", {"do A", "try look other", "do B"}, true);
    CHECK(apply_relevance(log, drop).events.size() == 2);
    const auto kept = apply_relevance(log, keep);
    REQUIRE(kept.events.size() == 3);
    CHECK(kept.events[1].kind == EventKind::Do);
    CHECK(kept.events[1].error_class == ErrorClass::None);
}

namespace {

ProtocolSpec linear_protocol() {
    ProtocolSpec p;
    p.actions = {"1", "2", "3", "4", "5"};
    p.distractors = {"AC"};
    return p;
}

} // namespace

TEST_CASE("all-zero profile yields identical error-free logs") {
    ErrorProfile clean;
    clean.name = "clean";
    const std::vector<ProfileCount> profiles{{clean, 5}};
    const auto cohort = generate_cohort(linear_protocol(), profiles, 3);
    REQUIRE(cohort.size() == 5);
    for (const auto& l : cohort) {
        REQUIRE(l.log.events.size() == 5);
        for (std::size_t i = 0; i < 5; ++i) {
            CHECK(l.log.events[i].kind == EventKind::Do);
            CHECK(l.log.events[i].action == std::to_string(i + 1));
        }
        CHECK(l.log.completed());
    }
}

TEST_CASE("a premature attempt at step 2 adds exactly one blocked attempt") {
    ErrorProfile p;
    p.name = "eager";
    p.p_premature = 1.0;
    p.repeat_geom = 1.0;
    p.active_steps = {2};
    const std::vector<ProfileCount> profiles{{p, 20}};
    for (const auto& l : generate_cohort(linear_protocol(), profiles, 11)) {
        const auto& ev = l.log.events;
        REQUIRE(ev.size() == 6);
        CHECK(ev[1].kind == EventKind::Try);
        CHECK(ev[1].action == "3");
        CHECK(ev[2].kind == EventKind::Do);
        CHECK(ev[2].action == "2");
    }
}

TEST_CASE("generation is deterministic for a seed") {
    const auto config = parse_generator_config("actions = 1, 2, 3, 4\ncommute = 2, 3\ndistractors = AC\n"
                                               "[profile a]\np_premature = 0.3\np_skip = 0.1\n"
                                               "p_distractor = 0.1\nrepeat_geom = 0.5\n");
    const auto counts = distribute(config, 30);
    const auto a = serialize_logs(logs_of(generate_cohort(config.protocol, counts, 42)));
    const auto b = serialize_logs(logs_of(generate_cohort(config.protocol, counts, 42)));
    const auto c = serialize_logs(logs_of(generate_cohort(config.protocol, counts, 43)));
    CHECK(a == b);
    CHECK(a != c);
}

TEST_CASE("empty protocol is a configuration error") {
    ErrorProfile p;
    const std::vector<ProfileCount> profiles{{p, 1}};
    CHECK_THROWS_AS(generate_cohort(ProtocolSpec{}, profiles, 1), ConfigError);
}

TEST_CASE("empirical error rates converge to the profile") {
    // Steps 1-4 of the linear protocol are eligible for premature attempts
    // and skips; all 5 for distractors.
    ErrorProfile p;
    p.name = "mixed";
    p.p_premature = 0.3;
    p.p_skip = 0.2;
    p.p_distractor = 0.1;
    p.p_abandon = 0.15;
    p.repeat_geom = 1.0;
    const int n = 10000;
    const std::vector<ProfileCount> profiles{{p, n}};
    const auto cohort = generate_cohort(linear_protocol(), profiles, 5);
    // Per-step rates are measured on complete logs so the abandonment point
    // does not need modelling.
    double abandoned = 0, complete = 0, tries = 0, fails = 0, distractors = 0;
    for (const auto& l : cohort) {
        if (!l.log.completed()) {
            ++abandoned;
            continue;
        }
        ++complete;
        for (const auto& e : l.log.events) {
            if (e.kind == EventKind::Try) ++tries;
            if (e.kind == EventKind::Fail && e.action != "AC") ++fails;
            if (e.kind == EventKind::Do && e.action == "AC") ++distractors;
        }
    }
    CHECK(std::abs(abandoned / n - 0.15) <= 0.02);
    CHECK(std::abs(fails / (4 * complete) - 0.2) <= 0.02);
    // A skipped step offers no premature attempt or distractor.
    CHECK(std::abs(tries / (4 * complete - fails) - 0.3) <= 0.02);
    CHECK(std::abs(distractors / (5 * complete - fails) - 0.1) <= 0.02);
}
