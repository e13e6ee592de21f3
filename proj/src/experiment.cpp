#include "fedner/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "fedner/corpus.hpp"

namespace fedner {

void ExperimentConfig::validate() const {
    if (corpus_path.empty()) throw config_error("config: corpus path is required");
    if (test_corpus_path.empty()) throw config_error("config: test_corpus path is required");
    if (seeds.empty()) throw config_error("config: at least one seed is required");
    if (schedule_base == 0) throw config_error("config: schedule_base must be positive");
    try {
        fed.validate();
        tagger.validate();
    } catch (const std::invalid_argument& e) {
        throw config_error(e.what());
    }
    const MethodPlan plan = plan_for(method);
    if (plan.use_skd && tagger.hidden_dim % fed.skd_groups != 0) {
        throw config_error("config: hidden_dim " + std::to_string(tagger.hidden_dim) +
                           " must be divisible by groups " + std::to_string(fed.skd_groups));
    }
}

namespace {

std::string trim(const std::string& s) {
    const auto from = s.find_first_not_of(" \t");
    if (from == std::string::npos) return "";
    const auto to = s.find_last_not_of(" \t");
    return s.substr(from, to - from + 1);
}

std::size_t to_count(const std::string& v, const std::string& key) {
    try {
        const long long n = std::stoll(v);
        if (n < 0) throw std::out_of_range("negative");
        return static_cast<std::size_t>(n);
    } catch (const std::exception&) {
        throw config_error("config: key '" + key + "' expects a non-negative integer, got '" +
                           v + "'");
    }
}

double to_real(const std::string& v, const std::string& key) {
    try {
        std::size_t used = 0;
        const double x = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument("trailing");
        return x;
    } catch (const std::exception&) {
        throw config_error("config: key '" + key + "' expects a number, got '" + v + "'");
    }
}

bool to_flag(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw config_error("config: key '" + key + "' expects true/false, got '" + v + "'");
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text, const std::string& name) {
    ExperimentConfig cfg;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw config_error(name + ":" + std::to_string(line_no) + ": expected 'key = value'");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty()) {
            throw config_error(name + ":" + std::to_string(line_no) + ": empty key or value");
        }

        if (key == "corpus") {
            cfg.corpus_path = value;
        } else if (key == "test_corpus") {
            cfg.test_corpus_path = value;
        } else if (key == "schedule_base") {
            cfg.schedule_base = to_count(value, key);
        } else if (key == "schedule_step") {
            cfg.schedule_step = to_count(value, key);
        } else if (key == "method") {
            auto m = parse_method(value);
            if (!m) throw config_error("config: unknown method '" + value + "'");
            cfg.method = *m;
        } else if (key == "seeds") {
            cfg.seeds.clear();
            std::istringstream ss(value);
            std::string item;
            while (std::getline(ss, item, ',')) {
                item = trim(item);
                if (!item.empty()) cfg.seeds.push_back(to_count(item, key));
            }
        } else if (key == "output_dir") {
            cfg.output_dir = value;
        } else if (key == "initial_clients") {
            cfg.fed.initial_clients = to_count(value, key);
        } else if (key == "clients_added_per_task") {
            cfg.fed.clients_added_per_task = to_count(value, key);
        } else if (key == "selection_fraction") {
            cfg.fed.selection_fraction = to_real(value, key);
        } else if (key == "rounds_per_task") {
            cfg.fed.rounds_per_task = to_count(value, key);
        } else if (key == "epochs_single_type") {
            cfg.fed.epochs_single_type = to_count(value, key);
        } else if (key == "epochs_multi_type") {
            cfg.fed.epochs_multi_type = to_count(value, key);
        } else if (key == "subsample_fraction") {
            cfg.fed.subsample_fraction = to_real(value, key);
        } else if (key == "entropy_threshold") {
            cfg.fed.entropy_threshold = to_real(value, key);
        } else if (key == "lambda1") {
            cfg.fed.lambda1 = to_real(value, key);
        } else if (key == "lambda2") {
            cfg.fed.lambda2 = to_real(value, key);
        } else if (key == "groups") {
            cfg.fed.skd_groups = to_count(value, key);
        } else if (key == "batch_size") {
            cfg.fed.batch_size = to_count(value, key);
        } else if (key == "lr_first_task") {
            cfg.fed.lr_first_task = to_real(value, key);
        } else if (key == "lr_later_tasks") {
            cfg.fed.lr_later_tasks = to_real(value, key);
        } else if (key == "entropy_per_token") {
            cfg.fed.entropy_per_token = to_flag(value, key);
        } else if (key == "prototypes_include_non_entity") {
            cfg.fed.prototypes_include_non_entity = to_flag(value, key);
        } else if (key == "vocab_hash_buckets") {
            cfg.tagger.vocab_hash_buckets = to_count(value, key);
        } else if (key == "embedding_dim") {
            cfg.tagger.embedding_dim = to_count(value, key);
        } else if (key == "hidden_dim") {
            cfg.tagger.hidden_dim = to_count(value, key);
        } else {
            throw config_error(name + ":" + std::to_string(line_no) + ": unknown key '" + key +
                               "'");
        }
    }
    if (const char* env = std::getenv("FEDNER_OUTPUT_DIR"); env && *env) {
        cfg.output_dir = env;
    }
    return cfg;
}

ExperimentConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("config: cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str(), path);
}

std::string RunPaths::rounds_file(const std::string& method, std::uint64_t seed) const {
    return dir + "/rounds_" + method + "_seed" + std::to_string(seed) + ".jsonl";
}
std::string RunPaths::metrics_file(const std::string& method) const {
    return dir + "/metrics_" + method + ".csv";
}
std::string RunPaths::summary_file(const std::string& method) const {
    return dir + "/summary_" + method + ".csv";
}

std::string format_f1(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

namespace {

nlohmann::json round_to_json(const RoundLog& log) {
    nlohmann::json j;
    j["task"] = log.task;
    j["round"] = log.round;
    j["selected"] = log.selected;
    j["skipped"] = log.skipped;
    nlohmann::json ent = nlohmann::json::object();
    for (const auto& [id, v] : log.entropies) ent[std::to_string(id)] = v;
    j["avg_entropy"] = std::move(ent);
    nlohmann::json sw = nlohmann::json::object();
    for (const auto& [id, v] : log.switch_flags) sw[std::to_string(id)] = v;
    j["switch"] = std::move(sw);
    nlohmann::json w = nlohmann::json::object();
    for (const auto& [id, v] : log.weights) w[std::to_string(id)] = v;
    j["weights"] = std::move(w);
    j["wall_ms"] = log.wall_ms;
    return j;
}

}  // namespace

std::vector<ExperimentOutcome> run(const ExperimentConfig& config) {
    config.validate();
    const std::string method = method_name(config.method);
    const MethodPlan plan = plan_for(config.method);

    Corpus train = load_corpus(config.corpus_path);
    Corpus test = load_corpus(config.test_corpus_path);
    if (!(train.registry == test.registry)) {
        // The test split may legitimately miss rare types; require subset.
        for (const std::string& t : test.registry.types()) {
            if (!train.registry.find_type(t)) {
                throw config_error("config: test corpus type '" + t +
                                   "' does not occur in the training corpus");
            }
        }
    }
    // Re-express test labels in the training registry's id space.
    std::vector<Sentence> test_sentences;
    test_sentences.reserve(test.sentences.size());
    for (const Sentence& s : test.sentences) {
        Sentence converted = s;
        for (std::size_t j = 0; j < s.labels.size(); ++j) {
            converted.labels[j] =
                *train.registry.parse_label(test.registry.label_name(s.labels[j]));
        }
        test_sentences.push_back(std::move(converted));
    }

    TaskStream stream;
    try {
        stream = build_task_stream(train, config.schedule_base, config.schedule_step,
                                   config.seeds.front());
    } catch (const std::invalid_argument& e) {
        throw config_error(e.what());
    }

    RunPaths paths{config.output_dir};
    std::filesystem::create_directories(config.output_dir);

    std::ofstream metrics(paths.metrics_file(method), std::ios::binary);
    std::ofstream summary(paths.summary_file(method), std::ios::binary);
    if (!metrics || !summary) {
        throw std::runtime_error("cannot write result files under " + config.output_dir);
    }
    metrics << "seed,task,old_ma_f1,new_ma_f1,all_mi_f1,all_ma_f1\n" << std::flush;
    summary << "seed,avg_mi_f1,avg_ma_f1\n" << std::flush;

    std::vector<ExperimentOutcome> outcomes;
    for (std::uint64_t seed : config.seeds) {
        FederationConfig fed = config.fed;
        TaggerConfig tagger = config.tagger;
        fed.seed = seed;
        tagger.seed = seed;

        std::ofstream rounds(paths.rounds_file(method, seed), std::ios::binary);
        if (!rounds) {
            throw std::runtime_error("cannot write round log under " + config.output_dir);
        }
        auto on_round = [&rounds](const RoundLog& log) {
            rounds << round_to_json(log).dump() << '\n' << std::flush;
        };

        std::cerr << "[" << method << " seed " << seed << "] running...\n";
        ExperimentOutcome outcome =
            run_experiment(fed, tagger, plan, stream, test_sentences, on_round);

        for (const TaskMetricsRow& row : outcome.per_task) {
            metrics << seed << ',' << row.task << ',' << format_f1(row.old_ma_f1) << ','
                    << format_f1(row.new_ma_f1) << ',' << format_f1(row.all_mi_f1) << ','
                    << format_f1(row.all_ma_f1) << '\n';
        }
        metrics << std::flush;
        summary << seed << ',' << format_f1(outcome.avg_mi_f1) << ','
                << format_f1(outcome.avg_ma_f1) << '\n'
                << std::flush;
        outcomes.push_back(std::move(outcome));
    }
    return outcomes;
}

}  // namespace fedner
