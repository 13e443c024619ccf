#pragma once

// Run reports and their line-delimited JSON encoding.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedsel/error.hpp"

namespace fedsel::report {

using ojson = nlohmann::ordered_json;

struct RoundRecord {
    int round = 0;  // 1-based
    std::vector<int> selected;
    int k = 0;
    double acc = 0.0;
    double loss = 0.0;
    double auc = NAN;  // NaN when the holdout holds a single class
    double objective = 0.0;
    double cost = 0.0;
    int failures = 0;
    int recoveries = 0;
    int excluded = 0;
    double sim_clock = 0.0;

    bool operator==(const RoundRecord& o) const {
        auto same = [](double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); };
        return round == o.round && selected == o.selected && k == o.k && same(acc, o.acc) &&
               same(loss, o.loss) && same(auc, o.auc) && same(objective, o.objective) &&
               same(cost, o.cost) && failures == o.failures && recoveries == o.recoveries &&
               excluded == o.excluded && same(sim_clock, o.sim_clock);
    }
};

struct RunSummary {
    std::uint64_t seed = 0;
    int rounds_run = 0;
    int max_rounds = 0;
    int skipped_rounds = 0;
    double sim_time = 0.0;
    double epsilon_spent = 0.0;
    double delta_spent = 0.0;
    bool converged = false;
    int total_failures = 0;
    int total_recoveries = 0;
    std::vector<std::string> warnings;

    bool operator==(const RunSummary&) const = default;
};

struct RunReport {
    std::vector<RoundRecord> rounds;
    RunSummary summary;

    const RoundRecord* final_round() const { return rounds.empty() ? nullptr : &rounds.back(); }

    /// First 1-based round whose holdout accuracy reaches `target`;
    /// max_rounds + 1 when it never does.
    int rounds_to_target(double target) const {
        for (const auto& r : rounds)
            if (r.acc >= target) return r.round;
        return summary.max_rounds + 1;
    }

    /// Simulated clock at the first round reaching `target`, or +inf.
    double time_to_target(double target) const {
        for (const auto& r : rounds)
            if (r.acc >= target) return r.sim_clock;
        return INFINITY;
    }

    bool operator==(const RunReport&) const = default;
};

inline ojson number_or_null(double v) { return std::isfinite(v) ? ojson(v) : ojson(nullptr); }

inline ojson to_json(const RoundRecord& r) {
    ojson j;
    j["round"] = r.round;
    j["selected"] = r.selected;
    j["k"] = r.k;
    j["acc"] = number_or_null(r.acc);
    j["loss"] = number_or_null(r.loss);
    j["auc"] = number_or_null(r.auc);
    j["objective"] = number_or_null(r.objective);
    j["cost"] = r.cost;
    j["failures"] = r.failures;
    j["recoveries"] = r.recoveries;
    j["excluded"] = r.excluded;
    j["sim_clock"] = r.sim_clock;
    return j;
}

inline ojson to_json(const RunSummary& s) {
    ojson j;
    j["seed"] = s.seed;
    j["rounds_run"] = s.rounds_run;
    j["max_rounds"] = s.max_rounds;
    j["skipped_rounds"] = s.skipped_rounds;
    j["sim_time"] = s.sim_time;
    j["epsilon_spent"] = s.epsilon_spent;
    j["delta_spent"] = s.delta_spent;
    j["converged"] = s.converged;
    j["total_failures"] = s.total_failures;
    j["total_recoveries"] = s.total_recoveries;
    j["warnings"] = s.warnings;
    return j;
}

/// One JSON object per round record, then {"summary": {...}}; '\n' separated.
inline std::string serialize(const RunReport& report) {
    std::string out;
    for (const auto& r : report.rounds) {
        out += to_json(r).dump();
        out += '\n';
    }
    ojson s;
    s["summary"] = to_json(report.summary);
    out += s.dump();
    out += '\n';
    return out;
}

inline double double_or_nan(const ojson& j) { return j.is_null() ? NAN : j.get<double>(); }

inline RunReport parse(const std::string& text) {
    RunReport rep;
    std::istringstream in(text);
    std::string line;
    bool have_summary = false;
    try {
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto j = ojson::parse(line);
            if (j.contains("summary")) {
                const auto& s = j["summary"];
                rep.summary.seed = s.at("seed").get<std::uint64_t>();
                rep.summary.rounds_run = s.at("rounds_run").get<int>();
                rep.summary.max_rounds = s.at("max_rounds").get<int>();
                rep.summary.skipped_rounds = s.at("skipped_rounds").get<int>();
                rep.summary.sim_time = s.at("sim_time").get<double>();
                rep.summary.epsilon_spent = s.at("epsilon_spent").get<double>();
                rep.summary.delta_spent = s.at("delta_spent").get<double>();
                rep.summary.converged = s.at("converged").get<bool>();
                rep.summary.total_failures = s.at("total_failures").get<int>();
                rep.summary.total_recoveries = s.at("total_recoveries").get<int>();
                rep.summary.warnings = s.at("warnings").get<std::vector<std::string>>();
                have_summary = true;
                continue;
            }
            RoundRecord r;
            r.round = j.at("round").get<int>();
            r.selected = j.at("selected").get<std::vector<int>>();
            r.k = j.at("k").get<int>();
            r.acc = double_or_nan(j.at("acc"));
            r.loss = double_or_nan(j.at("loss"));
            r.auc = double_or_nan(j.at("auc"));
            r.objective = double_or_nan(j.at("objective"));
            r.cost = j.at("cost").get<double>();
            r.failures = j.at("failures").get<int>();
            r.recoveries = j.at("recoveries").get<int>();
            r.excluded = j.at("excluded").get<int>();
            r.sim_clock = j.at("sim_clock").get<double>();
            rep.rounds.push_back(std::move(r));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed run report: ") + e.what());
    }
    if (!have_summary) throw FormatError("run report has no summary line");
    return rep;
}

/// Temp file + rename, so an interrupted writer never leaves a truncated file.
inline void write_atomic(const std::filesystem::path& path, const std::string& contents) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
        out << contents;
        if (!out) throw IoError("write failed for " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename " + tmp.string() + ": " + ec.message());
}

} // namespace fedsel::report
