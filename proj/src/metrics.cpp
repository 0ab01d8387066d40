#include "arl/metrics.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "arl/error.hpp"

namespace arl {

using nlohmann::json;

double MetricsReport::summary_or(const std::string& key, double fallback) const {
    auto it = summary.find(key);
    return it == summary.end() ? fallback : it->second;
}

namespace {

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path + "'");
    return out;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read '" + path + "'");
    return in;
}

json tagged(const MetricsReport& r, const char* type) {
    json j;
    j["schema_version"] = kMetricsSchemaVersion;
    j["type"] = type;
    j["config_hash"] = r.config_hash;
    j["seed"] = r.seed;
    return j;
}

}  // namespace

void write_jsonl(const MetricsReport& r, const std::string& path) {
    std::ofstream out = open_out(path);
    for (const auto& e : r.evals) {
        json j = tagged(r, "eval");
        j["env_steps"] = e.env_steps;
        j["wall_s"] = e.wall_s;
        j["mean_return"] = e.mean_return;
        j["success_rate"] = e.success_rate;
        j["policy_version"] = e.policy_version;
        j["task_returns"] = e.task_returns;
        out << j.dump() << '\n';
    }
    for (const auto& t : r.train) {
        json j = tagged(r, "train");
        j["step"] = t.step;
        j["wall_s"] = t.wall_s;
        j["env_steps"] = t.env_steps;
        j["version"] = t.version;
        j["critic_version"] = t.critic_version;
        j["staleness"] = t.staleness;
        j["policy_loss"] = t.policy_loss;
        j["value_loss"] = t.value_loss;
        j["entropy"] = t.entropy;
        j["mean_ratio"] = t.mean_ratio;
        j["max_ratio"] = t.max_ratio;
        j["clip_fraction"] = t.clip_fraction;
        j["mean_trust_weight"] = t.mean_trust_weight;
        j["grad_norm"] = t.grad_norm;
        out << j.dump() << '\n';
    }
    for (const auto& p : r.throughput) {
        json j = tagged(r, "throughput");
        j["wall_s"] = p.wall_s;
        j["env_steps"] = p.env_steps;
        j["episodes"] = p.episodes;
        j["episodes_per_s"] = p.episodes_per_s;
        j["steps_per_s"] = p.steps_per_s;
        j["worker_utilization"] = p.worker_utilization;
        out << j.dump() << '\n';
    }
    if (!r.summary.empty()) {
        json j = tagged(r, "summary");
        j["values"] = r.summary;
        out << j.dump() << '\n';
    }
    if (!out) throw IoError("write failed for '" + path + "'");
}

MetricsReport read_jsonl(const std::string& path) {
    std::ifstream in = open_in(path);
    MetricsReport r;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw IoError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        if (!j.contains("schema_version") || j["schema_version"].get<int>() != kMetricsSchemaVersion) {
            throw IoError(path + ":" + std::to_string(lineno) + ": missing or unsupported schema_version");
        }
        r.config_hash = j.at("config_hash").get<std::string>();
        r.seed = j.at("seed").get<std::uint64_t>();
        const std::string type = j.at("type").get<std::string>();
        if (type == "eval") {
            EvalPoint e;
            e.env_steps = j.at("env_steps").get<std::size_t>();
            e.wall_s = j.at("wall_s").get<double>();
            e.mean_return = j.at("mean_return").get<double>();
            e.success_rate = j.at("success_rate").get<double>();
            e.policy_version = j.at("policy_version").get<std::uint64_t>();
            e.task_returns = j.at("task_returns").get<std::vector<double>>();
            r.evals.push_back(std::move(e));
        } else if (type == "train") {
            TrainPoint t;
            t.step = j.at("step").get<std::size_t>();
            t.wall_s = j.at("wall_s").get<double>();
            t.env_steps = j.at("env_steps").get<std::size_t>();
            t.version = j.at("version").get<std::uint64_t>();
            t.critic_version = j.at("critic_version").get<std::uint64_t>();
            t.staleness = j.at("staleness").get<std::uint64_t>();
            t.policy_loss = j.at("policy_loss").get<double>();
            t.value_loss = j.at("value_loss").get<double>();
            t.entropy = j.at("entropy").get<double>();
            t.mean_ratio = j.at("mean_ratio").get<double>();
            t.max_ratio = j.at("max_ratio").get<double>();
            t.clip_fraction = j.at("clip_fraction").get<double>();
            t.mean_trust_weight = j.at("mean_trust_weight").get<double>();
            t.grad_norm = j.at("grad_norm").get<double>();
            r.train.push_back(t);
        } else if (type == "throughput") {
            ThroughputPoint p;
            p.wall_s = j.at("wall_s").get<double>();
            p.env_steps = j.at("env_steps").get<std::size_t>();
            p.episodes = j.at("episodes").get<std::size_t>();
            p.episodes_per_s = j.at("episodes_per_s").get<double>();
            p.steps_per_s = j.at("steps_per_s").get<double>();
            p.worker_utilization = j.at("worker_utilization").get<double>();
            r.throughput.push_back(p);
        } else if (type == "summary") {
            r.summary = j.at("values").get<std::map<std::string, double>>();
        } else {
            throw IoError(path + ":" + std::to_string(lineno) + ": unknown record type '" + type + "'");
        }
    }
    return r;
}

namespace {
constexpr const char* kCsvHeader = "env_steps,wall_s,mean_return,success_rate,policy_version";
}

void write_csv(const MetricsReport& r, const std::string& path) {
    std::ofstream out = open_out(path);
    out.precision(17);
    out << kCsvHeader << '\n';
    for (const auto& e : r.evals) {
        out << e.env_steps << ',' << e.wall_s << ',' << e.mean_return << ',' << e.success_rate << ','
            << e.policy_version << '\n';
    }
    if (!out) throw IoError("write failed for '" + path + "'");
}

std::vector<EvalPoint> read_csv(const std::string& path) {
    std::ifstream in = open_in(path);
    std::string line;
    if (!std::getline(in, line) || line != kCsvHeader) throw IoError(path + ": unexpected CSV header");
    std::vector<EvalPoint> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell[5];
        for (auto& c : cell) {
            if (!std::getline(ss, c, ',')) throw IoError(path + ": short CSV row '" + line + "'");
        }
        EvalPoint e;
        try {
            e.env_steps = std::stoull(cell[0]);
            e.wall_s = std::stod(cell[1]);
            e.mean_return = std::stod(cell[2]);
            e.success_rate = std::stod(cell[3]);
            e.policy_version = std::stoull(cell[4]);
        } catch (const std::exception&) {
            throw IoError(path + ": malformed CSV row '" + line + "'");
        }
        out.push_back(e);
    }
    return out;
}

void write_report(const MetricsReport& r, const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
    write_jsonl(r, (std::filesystem::path(dir) / "metrics.jsonl").string());
    write_csv(r, (std::filesystem::path(dir) / "learning_curve.csv").string());
}

std::optional<std::size_t> steps_to_reach(const std::vector<EvalPoint>& evals, double threshold) {
    for (const auto& e : evals) {
        if (e.mean_return >= threshold) return e.env_steps;
    }
    return std::nullopt;
}

}  // namespace arl
