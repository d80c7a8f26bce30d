#include "csm/validation.hpp"

#include "csm/error.hpp"
#include "csm/rng.hpp"
#include "csm/text.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <thread>

namespace csm {

double event_error(const ExtendedAutomaton& a, const StepMatch& match, const SubmodelFilter& filter) {
    if (match.branch == StepMatch::Branch::Missing) {
        return 1.0;
    }
    if (support(a, match.target) < filter.support || confidence(a, match.transition) < filter.confidence) {
        return 0.0;
    }
    const auto& tr = a.transition(match.transition);
    const double gamma = static_cast<double>(a.state(match.source).gamma);
    switch (match.branch) {
    case StepMatch::Branch::Normal: return 1.0 - static_cast<double>(tr.frequency()) / gamma;
    case StepMatch::Branch::FirstExit:
        return 1.0 - static_cast<double>(tr.phi_vec.empty() ? 0 : tr.phi_vec[0]) / gamma;
    case StepMatch::Branch::RepeatedExit: {
        Count n = 0;
        for (std::size_t i = 1; i < tr.phi_vec.size(); ++i) {
            n += tr.phi_vec[i];
        }
        return 1.0 - static_cast<double>(n) / gamma;
    }
    case StepMatch::Branch::Missing: break;
    }
    return 1.0;
}

namespace {

std::string_view branch_name(StepMatch::Branch b) {
    switch (b) {
    case StepMatch::Branch::Missing: return "missing";
    case StepMatch::Branch::Normal: return "normal";
    case StepMatch::Branch::FirstExit: return "first";
    case StepMatch::Branch::RepeatedExit: return "repeated";
    }
    return "?";
}

} // namespace

std::vector<StepMatch> match_log(const ExtendedAutomaton& a, const StudentLog& log, int cluster) {
    std::vector<StepMatch> out;
    SituationKey key;
    StateId state = initial_state;
    bool in_model = true;
    Count repeats = 0;
    for (const auto& step : fold_repeats(log.events)) {
        const auto sig = EventSignature::of(step.event);
        auto next_key = successor(key, step.event);
        StepMatch m;
        const auto dst = a.find(next_key);
        if (dst) {
            const auto t = in_model ? a.find_transition(state, sig) : std::nullopt;
            if (t) {
                m.transition = *t;
                m.source = state;
                m.target = *dst;
                m.branch = !a.transition(*t).is_vector ? StepMatch::Branch::Normal
                           : repeats == 0              ? StepMatch::Branch::FirstExit
                                                       : StepMatch::Branch::RepeatedExit;
            }
            state = *dst;
            in_model = true;
        } else {
            in_model = false;
        }
        m.identity = std::to_string(cluster) + '|' + key.encode() + '|' + sig.encode() + '|' +
                     std::string(branch_name(m.branch));
        out.push_back(std::move(m));
        key = std::move(next_key);
        repeats = step.extra_repeats;
    }
    return out;
}

double mean_error(std::span<const WeightedError> events) {
    double num = 0.0;
    double den = 0.0;
    for (const auto& e : events) {
        num += e.error * static_cast<double>(e.students);
        den += static_cast<double>(e.students);
    }
    if (den <= 0.0) {
        throw UndefinedValueError("mean error of an empty test set");
    }
    return num / den;
}

double test_set_error(std::span<const AlignmentResult> results, std::span<const StudentId> students) {
    std::map<std::string, std::pair<double, std::set<StudentId>>> events;
    for (std::size_t i = 0; i < results.size(); ++i) {
        for (std::size_t j = 0; j < results[i].errors.size(); ++j) {
            auto& slot = events[results[i].identities[j]];
            slot.first = results[i].errors[j];
            slot.second.insert(students[i]);
        }
    }
    std::vector<WeightedError> weighted;
    weighted.reserve(events.size());
    for (const auto& [_, v] : events) {
        weighted.push_back({v.first, static_cast<Count>(v.second.size())});
    }
    return mean_error(weighted);
}

AlignmentResult align(const CollectiveModel& m, const StudentLog& raw, const SubmodelFilter& filter) {
    const auto log = apply_relevance(raw, m.config.relevance);
    AlignmentResult r;
    r.cluster = best_cluster(m, log);
    const auto& a = m.clusters[static_cast<std::size_t>(r.cluster)].automaton;
    for (const auto& match : match_log(a, log, r.cluster)) {
        r.errors.push_back(event_error(a, match, filter));
        r.identities.push_back(match.identity);
    }
    {
        // Every situation missing from the automaton is a temporary state.
        SituationKey key;
        for (const auto& step : fold_repeats(log.events)) {
            key = successor(key, step.event);
            if (!a.find(key)) {
                ++r.temporary_states;
            }
        }
    }
    if (!r.errors.empty()) {
        const std::vector<StudentId> one{log.student};
        r.mean = test_set_error(std::span(&r, 1), one);
    }
    return r;
}

std::vector<double> default_thresholds() { return {0.0, 0.1, 0.25, 0.5, 0.75, 0.9}; }

namespace {

struct PreparedLog {
    int cluster = 0;
    std::vector<StepMatch> matches;
};

} // namespace

GridReport cross_validate(std::span<const StudentLog> input, const ModelConfig& config,
                          std::span<const double> supports, std::span<const double> confidences, int splits,
                          std::uint64_t seed, int jobs) {
    if (input.size() < 10) {
        throw ConfigError("cross-validation needs at least 10 logs");
    }
    if (splits < 1 || supports.empty() || confidences.empty()) {
        throw ConfigError("cross-validation needs at least one split and one grid cell");
    }
    for (const double v : supports) {
        if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("support thresholds must lie in [0, 1]");
    }
    for (const double v : confidences) {
        if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("confidence thresholds must lie in [0, 1]");
    }
    const std::size_t n = input.size();
    const std::size_t test_size = (n + 9) / 10;
    const std::size_t rows = supports.size();
    const std::size_t cols = confidences.size();

    GridReport report;
    report.method = std::string(to_string(config.clustering.method));
    report.feature = config.clustering.feature ? std::string(to_string(*config.clustering.feature)) : "-";
    report.k = build_model(input, config, seed).clustering.k;
    report.supports.assign(supports.begin(), supports.end());
    report.confidences.assign(confidences.begin(), confidences.end());
    report.splits = splits;
    report.seed = seed;

    // split -> cell -> error (NaN when the test set had no events)
    std::vector<std::vector<double>> per_split(static_cast<std::size_t>(splits));
    auto run_split = [&](int s) {
        Rng rng(mix_seed(seed, static_cast<std::uint64_t>(s)));
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        rng.shuffle(std::span(order));
        std::vector<std::size_t> test(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(test_size));
        std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(test_size), order.end());
        std::sort(test.begin(), test.end());
        std::sort(train.begin(), train.end());
        std::vector<StudentLog> train_logs;
        train_logs.reserve(train.size());
        for (const auto i : train) {
            train_logs.push_back(input[i]);
        }
        const auto model = build_model(train_logs, config, mix_seed(seed, 1000003 + static_cast<std::uint64_t>(s)));

        std::vector<PreparedLog> prepared;
        std::vector<StudentId> students;
        for (const auto i : test) {
            const auto log = apply_relevance(input[i], config.relevance);
            PreparedLog p;
            p.cluster = best_cluster(model, log);
            p.matches = match_log(model.clusters[static_cast<std::size_t>(p.cluster)].automaton, log, p.cluster);
            prepared.push_back(std::move(p));
            students.push_back(log.student);
        }

        auto& cells = per_split[static_cast<std::size_t>(s)];
        cells.assign(rows * cols, std::nan(""));
        std::vector<AlignmentResult> results(prepared.size());
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) {
                const SubmodelFilter filter{supports[r], confidences[c]};
                bool any = false;
                for (std::size_t i = 0; i < prepared.size(); ++i) {
                    const auto& a = model.clusters[static_cast<std::size_t>(prepared[i].cluster)].automaton;
                    results[i].errors.clear();
                    results[i].identities.clear();
                    for (const auto& match : prepared[i].matches) {
                        results[i].errors.push_back(event_error(a, match, filter));
                        results[i].identities.push_back(match.identity);
                    }
                    any = any || !prepared[i].matches.empty();
                }
                if (any) {
                    cells[r * cols + c] = test_set_error(results, students);
                }
            }
        }
    };

    const int workers = std::clamp(jobs, 1, splits);
    if (workers == 1) {
        for (int s = 0; s < splits; ++s) {
            run_split(s);
        }
    } else {
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                try {
                    for (int s = w; s < splits; s += workers) {
                        run_split(s);
                    }
                } catch (...) {
                    errors[static_cast<std::size_t>(w)] = std::current_exception();
                }
            });
        }
        for (auto& t : pool) {
            t.join();
        }
        for (const auto& e : errors) {
            if (e) {
                std::rethrow_exception(e);
            }
        }
    }

    // Reduce in split order so the bytes do not depend on `jobs`.
    report.cells.assign(rows, std::vector<double>(cols, 0.0));
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            double sum = 0.0;
            int used = 0;
            for (const auto& cells : per_split) {
                const double v = cells[r * cols + c];
                if (!std::isnan(v)) {
                    sum += v;
                    ++used;
                }
            }
            if (used == 0) {
                throw UndefinedValueError("no test events in any split");
            }
            report.cells[r][c] = sum / used;
        }
    }
    return report;
}

std::string render_grid_text(const GridReport& r) {
    std::string out = "# mean error by support (rows) and confidence (columns)\n";
    out += "# method=" + r.method + " feature=" + r.feature + " k=" + std::to_string(r.k) +
           " splits=" + std::to_string(r.splits) + " seed=" + std::to_string(r.seed) + "\n";
    out += "support\\confidence";
    for (const double c : r.confidences) {
        out += '\t' + text::format_double(c);
    }
    out += '\n';
    for (std::size_t i = 0; i < r.supports.size(); ++i) {
        out += text::format_double(r.supports[i]);
        for (const double v : r.cells[i]) {
            out += '\t' + text::format_fixed(v, 4);
        }
        out += '\n';
    }
    return out;
}

std::string render_grid_csv(const GridReport& r) {
    std::string out = "feature,method,k,support";
    for (const double c : r.confidences) {
        out += ',' + text::format_double(c);
    }
    out += '\n';
    for (std::size_t i = 0; i < r.supports.size(); ++i) {
        out += r.feature + ',' + r.method + ',' + std::to_string(r.k) + ',' + text::format_double(r.supports[i]);
        for (const double v : r.cells[i]) {
            out += ',' + text::format_fixed(v, 6);
        }
        out += '\n';
    }
    return out;
}

namespace {

std::set<std::string> errors_in(const StudentLog& log) {
    std::set<std::string> out;
    for (const auto& e : log.events) {
        if (e.kind == EventKind::Fail) {
            out.insert(EventSignature::of(e).label());
        }
    }
    return out;
}

double sample_variance(std::span<const double> v) {
    if (v.size() < 2) {
        return 0.0;
    }
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (const double x : v) {
        ss += (x - mean) * (x - mean);
    }
    return ss / static_cast<double>(v.size() - 1);
}

} // namespace

ErrorFrequencyTable error_frequency_table(std::span<const std::vector<StudentLog>> groups,
                                          std::span<const std::string> selection, std::size_t top) {
    ErrorFrequencyTable t;
    std::vector<std::vector<std::set<std::string>>> sets(groups.size());
    std::map<std::string, std::size_t> totals;
    for (std::size_t g = 0; g < groups.size(); ++g) {
        t.cluster_sizes.push_back(groups[g].size());
        for (const auto& log : groups[g]) {
            sets[g].push_back(errors_in(log));
            for (const auto& e : sets[g].back()) {
                ++totals[e];
            }
        }
    }
    if (!selection.empty()) {
        t.errors.assign(selection.begin(), selection.end());
    } else {
        std::vector<std::pair<std::string, std::size_t>> ranked(totals.begin(), totals.end());
        std::stable_sort(ranked.begin(), ranked.end(),
                         [](const auto& a, const auto& b) { return a.second > b.second; });
        for (std::size_t i = 0; i < ranked.size() && i < top; ++i) {
            t.errors.push_back(ranked[i].first);
        }
    }
    for (const auto& err : t.errors) {
        std::vector<double> row;
        for (std::size_t g = 0; g < groups.size(); ++g) {
            const auto hits = std::count_if(sets[g].begin(), sets[g].end(),
                                            [&](const std::set<std::string>& s) { return s.contains(err); });
            row.push_back(groups[g].empty() ? 0.0
                                            : static_cast<double>(hits) / static_cast<double>(groups[g].size()));
        }
        t.variances.push_back(sample_variance(row));
        t.frequencies.push_back(std::move(row));
    }
    t.cluster_averages.assign(groups.size(), 0.0);
    if (!t.errors.empty()) {
        for (std::size_t g = 0; g < groups.size(); ++g) {
            for (const auto& row : t.frequencies) {
                t.cluster_averages[g] += row[g];
            }
            t.cluster_averages[g] /= static_cast<double>(t.errors.size());
        }
        t.average_variance =
            std::accumulate(t.variances.begin(), t.variances.end(), 0.0) / static_cast<double>(t.variances.size());
    }
    return t;
}

ErrorFrequencyTable error_by_cluster_report(const CollectiveModel& m, std::span<const std::string> selection,
                                            std::size_t top) {
    std::vector<std::vector<StudentLog>> groups;
    for (const auto& c : m.clusters) {
        std::lock_guard lock(c.mutex.get());
        groups.push_back(c.members);
    }
    return error_frequency_table(groups, selection, top);
}

std::string render_error_table(const ErrorFrequencyTable& t) {
    std::string out = "error";
    for (std::size_t g = 0; g < t.cluster_sizes.size(); ++g) {
        out += "\tcluster " + std::to_string(g) + " (n=" + std::to_string(t.cluster_sizes[g]) + ")";
    }
    out += "\tvariance\n";
    for (std::size_t i = 0; i < t.errors.size(); ++i) {
        out += t.errors[i];
        for (const double f : t.frequencies[i]) {
            out += '\t' + text::format_fixed(f, 3);
        }
        out += '\t' + text::format_fixed(t.variances[i], 3) + '\n';
    }
    out += "average";
    for (const double a : t.cluster_averages) {
        out += '\t' + text::format_fixed(a, 3);
    }
    out += '\t' + text::format_fixed(t.average_variance, 3) + '\n';
    return out;
}

} // namespace csm
