#include "csm/cli.hpp"

#include "csm/error.hpp"
#include "csm/generator.hpp"
#include "csm/model.hpp"
#include "csm/prediction.hpp"
#include "csm/text.hpp"
#include "csm/validation.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <iostream>
#include <set>
#include <sstream>

namespace csm {

namespace {

constexpr std::uint64_t default_seed = 7;

/// Flag values that parse but make no sense; reported as usage errors.
class UsageError : public Error {
public:
    using Error::Error;
};

struct ModelFlags {
    std::string method = "none";
    std::string feature;
    std::string weights;
    int k_max = 10;
    std::string checkpoints;
    std::string irrelevant;
    bool keep_irrelevant = false;

    void add_to(CLI::App& app, bool with_checkpoints) {
        app.add_option("--method", method, "Clustering method: none, xmeans, em, sequence")->capture_default_str();
        app.add_option("--feature", feature,
                       "Feature function for xmeans/em: errors, errors-time, events-by-zone");
        app.add_option("--weights", weights,
                       "Error weights, e.g. dependency:1,incompatibility:1,world:0.5,other:0.25");
        app.add_option("--k-max", k_max, "Largest number of clusters considered")->capture_default_str();
        if (with_checkpoints) {
            app.add_option("--checkpoints", checkpoints,
                           "Reclassification checkpoints, e.g. step:5,time:0.5");
        }
        app.add_option("--irrelevant", irrelevant, "Comma-separated pedagogically irrelevant actions");
        app.add_flag("--keep-irrelevant", keep_irrelevant,
                     "Keep irrelevant actions as right actions instead of dropping them");
    }

    ModelConfig config() const {
        ModelConfig c;
        const auto m = parse_cluster_method(method);
        if (!m) {
            throw UsageError("unknown method '" + method + "'");
        }
        c.clustering.method = *m;
        if (!feature.empty()) {
            c.clustering.feature = parse_feature_kind(feature);
            if (!c.clustering.feature) {
                throw UsageError("unknown feature '" + feature + "'");
            }
        }
        c.clustering.k_max = k_max;
        for (const auto& item : text::split_list(weights)) {
            const auto colon = item.find(':');
            const auto v = colon == std::string::npos ? std::nullopt : text::parse_double(item.substr(colon + 1));
            const auto cls = parse_error_class(item.substr(0, colon == std::string::npos ? 0 : colon));
            if (!v || !cls || *cls == ErrorClass::None) {
                throw UsageError("bad weight '" + item + "'");
            }
            const double w = v.value_or(0.0);
            switch (*cls) {
            case ErrorClass::Dependency: c.clustering.weights.dependency = w; break;
            case ErrorClass::Incompatibility: c.clustering.weights.incompatibility = w; break;
            case ErrorClass::World: c.clustering.weights.world = w; break;
            case ErrorClass::Other: c.clustering.weights.other = w; break;
            case ErrorClass::None: break;
            }
        }
        for (const auto& cp : text::split_list(checkpoints)) {
            c.checkpoints.push_back(Checkpoint::parse(cp));
        }
        for (const auto& a : text::split_list(irrelevant)) {
            c.relevance.irrelevant_actions.insert(a);
        }
        c.relevance.keep_irrelevant = keep_irrelevant;
        try {
            c.validate();
        } catch (const ConfigError& e) {
            throw UsageError(e.what());
        }
        return c;
    }
};

std::vector<double> parse_thresholds(const std::string& s, std::string_view what) {
    std::vector<double> out;
    for (const auto& item : text::split_list(s)) {
        const auto v = text::parse_double(item);
        if (!v || *v < 0.0 || *v > 1.0) {
            throw UsageError(std::string(what) + ": '" + item + "' is not a ratio in [0, 1]");
        }
        out.push_back(*v);
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

void emit(const std::string& path, const std::string& content, std::ostream& out) {
    if (path.empty() || path == "-") {
        out << content;
    } else {
        write_text_file(path, content);
    }
}

std::string grid_text(const GridReport& r, const std::string& format) {
    return format == "csv" ? render_grid_csv(r) : render_grid_text(r);
}

} // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Collective student model: learn, query and validate clustered event automata", "csm"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Show help for every subcommand");

    // gen
    auto* gen = app.add_subcommand("gen", "Generate a synthetic cohort log from a protocol/profile file");
    std::string gen_protocol, gen_out, gen_labels;
    int gen_students = 85;
    std::uint64_t gen_seed = default_seed;
    gen->add_option("--protocol", gen_protocol, "Protocol and error-profile file")->required();
    gen->add_option("--students", gen_students, "Number of students")->capture_default_str();
    gen->add_option("--seed", gen_seed, "Random seed")->capture_default_str();
    gen->add_option("--out", gen_out, "Output log file (default: standard output)");
    gen->add_option("--labels", gen_labels, "Also write student<TAB>profile lines to this file");

    // build
    auto* build = app.add_subcommand("build", "Cluster a cohort and build the collective model");
    std::string build_logs, build_out;
    std::uint64_t build_seed = default_seed;
    ModelFlags build_flags;
    build->add_option("--logs", build_logs, "Training log file")->required();
    build_flags.add_to(*build, true);
    build->add_option("--seed", build_seed, "Random seed")->capture_default_str();
    build->add_option("--out", build_out, "Output model file (default: standard output)");

    // validate
    auto* val = app.add_subcommand("validate", "Mean alignment error over a support/confidence grid");
    std::string val_logs, val_model, val_grid, val_supports, val_confidences, val_out, val_format = "text";
    int val_splits = 150, val_jobs = 1;
    std::uint64_t val_seed = default_seed;
    ModelFlags val_flags;
    val->add_option("--logs", val_logs, "Cohort log file (cross-validation) or test logs (with --model)")
        ->required();
    val->add_option("--model", val_model, "Align the logs against this model instead of cross-validating");
    val_flags.add_to(*val, false);
    val->add_option("--grid", val_grid, "Grid as support:confidence pairs, e.g. 0:0,0.5:0.5 (overrides lists)");
    val->add_option("--supports", val_supports, "Support thresholds (default 0,0.1,0.25,0.5,0.75,0.9)");
    val->add_option("--confidences", val_confidences, "Confidence thresholds (default 0,0.1,0.25,0.5,0.75,0.9)");
    val->add_option("--splits", val_splits, "Number of random 90/10 splits")->capture_default_str();
    val->add_option("--seed", val_seed, "Random seed")->capture_default_str();
    val->add_option("--jobs", val_jobs, "Worker threads (output does not depend on it)")->capture_default_str();
    val->add_option("--format", val_format, "Output format: text or csv")->capture_default_str();
    val->add_option("--out", val_out, "Output file (default: standard output)");

    // predict
    auto* pred = app.add_subcommand("predict", "Next-event distribution and hint triggers for a cluster");
    std::string pred_model, pred_prefix, pred_out;
    int pred_cluster = -1;
    HintPolicy policy;
    pred->add_option("--model", pred_model, "Model file")->required();
    pred->add_option("--prefix", pred_prefix, "Log of one student so far; locates the current state");
    pred->add_option("--cluster", pred_cluster, "Cluster to query (default: from the prefix, else default cluster)");
    pred->add_option("--min-confidence", policy.min_confidence, "Direct trigger threshold")->capture_default_str();
    pred->add_option("--min-support", policy.min_support, "Support threshold for triggers")->capture_default_str();
    pred->add_option("--min-reach", policy.min_reach, "Indirect trigger threshold")->capture_default_str();
    pred->add_option("--flounder-repeats", policy.flounder_repeats, "Repeats that count as floundering")
        ->capture_default_str();
    pred->add_option("--flounder-prob", policy.flounder_prob, "Floundering trigger threshold")->capture_default_str();
    pred->add_option("--out", pred_out, "Output file (default: standard output)");

    // reclassify
    auto* recl = app.add_subcommand("reclassify", "Stream new students into a model with checkpoint reclassification");
    std::string recl_model, recl_logs, recl_out;
    recl->add_option("--model", recl_model, "Model file")->required();
    recl->add_option("--logs", recl_logs, "Logs of the new students")->required();
    recl->add_option("--out", recl_out, "Updated model file")->required();

    // report-clusters
    auto* rep = app.add_subcommand("report-clusters", "Per-cluster frequencies of relevant errors");
    std::string rep_model, rep_errors, rep_out;
    std::size_t rep_top = 10;
    rep->add_option("--model", rep_model, "Model file")->required();
    rep->add_option("--top", rep_top, "Number of most frequent errors to list")->capture_default_str();
    rep->add_option("--errors", rep_errors, "Explicit errors to list, e.g. \"fail 5,fail AC\"");
    rep->add_option("--out", rep_out, "Output file (default: standard output)");

    // export-dot
    auto* dot = app.add_subcommand("export-dot", "Write one cluster automaton as a Graphviz graph");
    std::string dot_model, dot_out;
    int dot_cluster = 0;
    dot->add_option("--model", dot_model, "Model file")->required();
    dot->add_option("--cluster", dot_cluster, "Cluster index")->capture_default_str();
    dot->add_option("--out", dot_out, "Output file (default: standard output)");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) {
            const auto config = parse_generator_config(read_text_file(gen_protocol));
            const auto cohort = generate_cohort(config.protocol, distribute(config, gen_students), gen_seed);
            emit(gen_out, serialize_logs(logs_of(cohort)), out);
            if (!gen_labels.empty()) {
                std::string labels;
                for (const auto& l : cohort) {
                    labels += l.log.student + '\t' + l.profile + '\n';
                }
                write_text_file(gen_labels, labels);
            }
        } else if (build->parsed()) {
            const auto config = build_flags.config();
            const auto logs = read_log_file(build_logs);
            emit(build_out, save_model(build_model(logs, config, build_seed)), out);
        } else if (val->parsed()) {
            std::vector<double> supports = default_thresholds();
            std::vector<double> confidences = default_thresholds();
            if (!val_supports.empty()) supports = parse_thresholds(val_supports, "--supports");
            if (!val_confidences.empty()) confidences = parse_thresholds(val_confidences, "--confidences");
            if (!val_grid.empty()) {
                std::string s, c;
                for (const auto& pair : text::split_list(val_grid)) {
                    const auto colon = pair.find(':');
                    if (colon == std::string::npos) {
                        throw UsageError("--grid: '" + pair + "' must be support:confidence");
                    }
                    s += pair.substr(0, colon) + ',';
                    c += pair.substr(colon + 1) + ',';
                }
                supports = parse_thresholds(s, "--grid");
                confidences = parse_thresholds(c, "--grid");
            }
            if (supports.empty() || confidences.empty()) {
                throw UsageError("empty grid");
            }
            if (val_format != "text" && val_format != "csv") {
                throw UsageError("--format must be text or csv");
            }
            const auto logs = read_log_file(val_logs);
            GridReport report;
            if (!val_model.empty()) {
                const auto model = read_model_file(val_model);
                report.method = std::string(to_string(model.config.clustering.method));
                report.feature = model.config.clustering.feature
                                     ? std::string(to_string(*model.config.clustering.feature))
                                     : "-";
                report.k = model.clustering.k;
                report.supports = supports;
                report.confidences = confidences;
                report.seed = model.seed;
                std::vector<StudentId> students;
                for (const auto& l : logs) {
                    students.push_back(l.student);
                }
                for (const double s : supports) {
                    auto& row = report.cells.emplace_back();
                    for (const double c : confidences) {
                        std::vector<AlignmentResult> results;
                        for (const auto& l : logs) {
                            results.push_back(align(model, l, {s, c}));
                        }
                        row.push_back(test_set_error(results, students));
                    }
                }
            } else {
                if (val_splits < 1 || val_jobs < 1) {
                    throw UsageError("--splits and --jobs must be positive");
                }
                report = cross_validate(logs, val_flags.config(), supports, confidences, val_splits, val_seed,
                                        val_jobs);
            }
            emit(val_out, grid_text(report, val_format), out);
        } else if (pred->parsed()) {
            policy.validate();
            const auto model = read_model_file(pred_model);
            int cluster = pred_cluster;
            std::optional<StudentLog> prefix;
            if (!pred_prefix.empty()) {
                const auto logs = read_log_file(pred_prefix);
                if (logs.size() != 1) {
                    throw Error("--prefix must hold exactly one student's events");
                }
                prefix = apply_relevance(logs.front(), model.config.relevance);
                if (cluster < 0) {
                    cluster = assign(model.clustering, *prefix, false);
                }
            }
            if (cluster < 0) {
                cluster = default_cluster(model.clustering);
            }
            if (cluster >= static_cast<int>(model.clusters.size())) {
                throw UsageError("--cluster out of range");
            }
            const auto& c = model.clusters[static_cast<std::size_t>(cluster)];
            std::string report = "cluster\t" + std::to_string(cluster) + "\n";
            std::optional<StateId> state = initial_state;
            if (prefix) {
                SituationKey key;
                for (const auto& step : fold_repeats(prefix->events)) {
                    key = successor(key, step.event);
                }
                state = c.automaton.find(key);
            }
            if (state) {
                report += "state\ts" + std::to_string(*state) + " (" + describe_state(c.automaton, *state) +
                          ")\n\nnext\tconfidence\n";
                for (const auto& n : next_distribution(c.automaton, *state)) {
                    report += n.sig.label() + '\t' + text::format_fixed(n.confidence, 4) + '\n';
                }
            } else {
                report += "state\ttemporary (situation not in the model)\n";
            }
            auto triggers = hint_triggers(c.automaton, c.reach, policy);
            if (prefix) {
                // With a known position only the triggers at that state matter.
                std::erase_if(triggers, [&](const Prediction& p) { return !state || p.state != *state; });
            }
            report += "\n" + render_predictions(c.automaton, triggers);
            emit(pred_out, report, out);
        } else if (recl->parsed()) {
            auto model = read_model_file(recl_model);
            const auto logs = read_log_file(recl_logs);
            std::string report = "student\tstart\tfinal\tmoves\n";
            for (const auto& log : logs) {
                const int start = default_cluster(model.clustering);
                const int moves = stream_log(model, log);
                report += log.student + '\t' + std::to_string(start) + '\t' +
                          std::to_string(*model.cluster_of(log.student)) + '\t' + std::to_string(moves) + '\n';
            }
            write_text_file(recl_out, save_model(model));
            out << report;
        } else if (rep->parsed()) {
            const auto model = read_model_file(rep_model);
            std::vector<std::string> selection;
            for (const auto& e : text::split_list(rep_errors)) {
                selection.push_back(e);
            }
            emit(rep_out, render_error_table(error_by_cluster_report(model, selection, rep_top)), out);
        } else if (dot->parsed()) {
            const auto model = read_model_file(dot_model);
            if (dot_cluster < 0 || dot_cluster >= static_cast<int>(model.clusters.size())) {
                throw UsageError("--cluster out of range");
            }
            emit(dot_out, export_dot(model.clusters[static_cast<std::size_t>(dot_cluster)].automaton), out);
        }
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

} // namespace csm
