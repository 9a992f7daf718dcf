#pragma once

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ate/allocation.hpp"
#include "ate/analysis.hpp"
#include "ate/posterior.hpp"
#include "ate/types.hpp"

namespace ate {

inline constexpr int config_schema_version = 1;

struct OutputConfig {
    std::string directory = "results";
    std::vector<std::string> families{"summary", "band", "cdf", "verdict"};

    bool wants(const std::string& f) const {
        return std::find(families.begin(), families.end(), f) != families.end();
    }
};

struct ExperimentConfig {
    ExperimentSpec spec;
    OutputConfig outputs;
};

namespace config_detail {

using json = nlohmann::json;

inline void allow_keys(const json& j, const std::string& where, std::initializer_list<const char*> keys) {
    if (!j.is_object()) throw ConfigError(where, "must be an object");
    for (const auto& [k, v] : j.items()) {
        bool ok = false;
        for (const char* a : keys) ok = ok || k == a;
        if (!ok) throw ConfigError(where.empty() ? k : where + "." + k, "unknown key");
    }
}

inline std::string join(const std::string& where, const std::string& key) {
    return where.empty() ? key : where + "." + key;
}

inline const json& need(const json& j, const std::string& where, const char* key) {
    if (!j.contains(key)) throw ConfigError(join(where, key), "is required");
    return j.at(key);
}

inline double number(const json& v, const std::string& field) {
    if (v.is_null()) return INFINITY;
    if (!v.is_number()) throw ConfigError(field, "must be a number");
    return v.get<double>();
}

inline double number_or(const json& j, const std::string& where, const char* key, double fallback) {
    return j.contains(key) ? number(j.at(key), join(where, key)) : fallback;
}

inline std::uint64_t count(const json& v, const std::string& field) {
    if (!v.is_number_integer() || v.get<std::int64_t>() < 0) throw ConfigError(field, "must be a non-negative integer");
    return v.get<std::uint64_t>();
}

inline std::string text(const json& v, const std::string& field) {
    if (!v.is_string()) throw ConfigError(field, "must be a string");
    return v.get<std::string>();
}

inline Policy parse_policy(const std::string& s, const std::string& field) {
    if (s == "rule1") return Policy::Rule1;
    if (s == "rule2") return Policy::Rule2;
    if (s == "thompson") return Policy::Thompson;
    if (s == "fixed_block") return Policy::FixedBlock;
    throw ConfigError(field, "unknown policy '" + s + "' (rule1, rule2, thompson, fixed_block)");
}

inline FinalVariant parse_variant(const std::string& s, const std::string& field) {
    if (s == "original") return FinalVariant::Original;
    if (s == "no_control_margin") return FinalVariant::NoControlMargin;
    if (s == "symmetric_margin") return FinalVariant::SymmetricMargin;
    throw ConfigError(field, "unknown variant '" + s + "' (original, no_control_margin, symmetric_margin)");
}

inline Model parse_model(const std::string& s, const std::string& field) {
    if (s == "bernoulli") return Model::Bernoulli;
    if (s == "delayed") return Model::Delayed;
    if (s == "tte") return Model::TimeToEvent;
    throw ConfigError(field, "unknown model '" + s + "' (bernoulli, delayed, tte)");
}

inline BandFamily parse_band(const std::string& s, const std::string& field) {
    if (s == "joint_status") return BandFamily::JointStatus;
    if (s == "dropped_status") return BandFamily::DroppedStatus;
    if (s == "maximal_with_control_out") return BandFamily::MaximalControlOut;
    throw ConfigError(field, "unknown band family '" + s + "'");
}

inline EstimatorKind parse_estimator(const std::string& s, const std::string& field) {
    if (s == "auto") return EstimatorKind::automatic;
    if (s == "quadrature") return EstimatorKind::quadrature;
    if (s == "monte_carlo") return EstimatorKind::monte_carlo;
    throw ConfigError(field, "unknown method '" + s + "' (auto, quadrature, monte_carlo)");
}

inline const char* estimator_name(EstimatorKind k) {
    switch (k) {
        case EstimatorKind::automatic: return "auto";
        case EstimatorKind::quadrature: return "quadrature";
        case EstimatorKind::monte_carlo: return "monte_carlo";
    }
    return "?";
}

inline json number_json(double x) { return std::isinf(x) ? json(nullptr) : json(x); }

}  // namespace config_detail

/// Checks cross-field constraints of a complete spec.
inline void validate(const ExperimentSpec& s) {
    const std::size_t arms = s.num_arms;
    if (arms < 2 || arms > max_arms) throw ConfigError("num_arms", "must lie in [2, 32]");
    const bool tte = s.model == Model::TimeToEvent;
    if (tte ? s.gamma_priors.size() != arms : s.beta_priors.size() != arms) {
        throw ConfigError("priors", "need one prior per arm");
    }
    for (std::size_t k = 0; k < arms; ++k) {
        const std::string f = "priors[" + std::to_string(k) + "]";
        if (tte) {
            if (!(s.gamma_priors[k].shape > 0.0 && s.gamma_priors[k].rate > 0.0))
                throw ConfigError(f, "shape and rate must be > 0");
        } else if (!(s.beta_priors[k].alpha > 0.0 && s.beta_priors[k].beta > 0.0)) {
            throw ConfigError(f, "alpha and beta must be > 0");
        }
    }
    if (s.scenarios.empty()) throw ConfigError("scenarios", "at least one scenario is required");
    std::set<std::string> labels;
    for (std::size_t i = 0; i < s.scenarios.size(); ++i) {
        const auto& sc = s.scenarios[i];
        const std::string f = "scenarios[" + std::to_string(i) + "]";
        if (!labels.insert(sc.label).second) throw ConfigError(f + ".label", "duplicate label '" + sc.label + "'");
        if (sc.theta.size() != arms) throw ConfigError(f + ".theta", "needs num_arms entries");
        for (double th : sc.theta) {
            if (tte ? !(th > 0.0 && std::isfinite(th)) : !(th > 0.0 && th < 1.0))
                throw ConfigError(f + ".theta", tte ? "intensities must be > 0" : "rates must lie in (0, 1)");
        }
    }
    if (s.designs.empty()) throw ConfigError("designs", "at least one design is required");
    labels.clear();
    for (std::size_t i = 0; i < s.designs.size(); ++i) {
        const std::string f = "designs[" + std::to_string(i) + "]";
        if (!labels.insert(s.designs[i].label).second) throw ConfigError(f + ".label", "duplicate label");
        validate(s.designs[i], arms, f);
    }
    labels.clear();
    for (std::size_t i = 0; i < s.final_tests.size(); ++i) {
        const std::string f = "final_tests[" + std::to_string(i) + "]";
        if (!labels.insert(s.final_tests[i].label).second) throw ConfigError(f + ".label", "duplicate label");
        if (tte) throw ConfigError(f, "final tests apply to binary outcomes only");
        if (arms != 2) throw ConfigError(f, "final tests need exactly two arms");
        validate(s.final_tests[i], f);
    }
    if (s.n_max.empty()) throw ConfigError("n_max", "at least one value is required");
    for (auto n : s.n_max) {
        if (n < 1) throw ConfigError("n_max", "values must be >= 1");
    }
    for (auto n : s.checkpoints) {
        if (n < 1) throw ConfigError("checkpoints", "values must be >= 1");
    }
    if (s.replicates < 1) throw ConfigError("replicates", "must be >= 1");
    if (s.estimator.draws < 1) throw ConfigError("estimator.draws", "must be >= 1");
    if (s.estimator.quadrature_nodes < 2) throw ConfigError("estimator.quadrature_nodes", "must be >= 2");
    if (!(s.arrival_rate > 0.0)) throw ConfigError("arrival.rate", "must be > 0");
    if (!(s.delay >= 0.0)) throw ConfigError("arrival.delay", "must be >= 0");
    if (!(s.end_of_study > 0.0)) throw ConfigError("arrival.end_of_study", "must be > 0");
    if (s.vaccine) {
        if (!tte || arms != 2) throw ConfigError("vaccine", "needs the tte model with two arms");
        if (!(s.vaccine->ve_star >= 0.0 && s.vaccine->ve_star < 1.0))
            throw ConfigError("vaccine.ve_star", "must lie in [0, 1)");
        if (!(s.vaccine->epsilon1 > 0.0 && s.vaccine->epsilon1 < 0.5))
            throw ConfigError("vaccine.epsilon1", "must lie in (0, 0.5)");
    }
}

inline ExperimentConfig parse_config(const nlohmann::json& j) {
    using namespace config_detail;
    allow_keys(j, "", {"schema_version", "name", "model", "num_arms", "priors", "scenarios", "designs",
                       "final_tests", "n_max", "checkpoints", "replicates", "master_seed", "estimator", "bands",
                       "arrival", "vaccine", "outputs", "keep_verdicts"});
    const auto version = count(need(j, "", "schema_version"), "schema_version");
    if (version != static_cast<std::uint64_t>(config_schema_version))
        throw ConfigError("schema_version", "unsupported version " + std::to_string(version));

    ExperimentConfig cfg;
    ExperimentSpec& s = cfg.spec;
    if (j.contains("name")) s.name = text(j.at("name"), "name");
    if (j.contains("model")) s.model = parse_model(text(j.at("model"), "model"), "model");
    s.num_arms = count(need(j, "", "num_arms"), "num_arms");
    if (s.num_arms < 2 || s.num_arms > max_arms) throw ConfigError("num_arms", "must lie in [2, 32]");
    const bool tte = s.model == Model::TimeToEvent;

    // priors: one object per arm, or a single object used for every arm
    {
        const json& p = j.contains("priors") ? j.at("priors") : json::object();
        std::vector<json> items;
        if (p.is_array()) {
            items.assign(p.begin(), p.end());
        } else {
            items.assign(s.num_arms, p);
        }
        for (std::size_t k = 0; k < items.size(); ++k) {
            const std::string f = p.is_array() ? "priors[" + std::to_string(k) + "]" : "priors";
            if (tte) {
                allow_keys(items[k], f, {"shape", "rate"});
                s.gamma_priors.push_back({number_or(items[k], f, "shape", 1.0), number_or(items[k], f, "rate", 1.0)});
            } else {
                allow_keys(items[k], f, {"alpha", "beta"});
                s.beta_priors.push_back({number_or(items[k], f, "alpha", 1.0), number_or(items[k], f, "beta", 1.0)});
            }
        }
    }

    const json& scs = need(j, "", "scenarios");
    if (!scs.is_array()) throw ConfigError("scenarios", "must be an array");
    for (std::size_t i = 0; i < scs.size(); ++i) {
        const std::string f = "scenarios[" + std::to_string(i) + "]";
        allow_keys(scs[i], f, {"label", "role", "theta"});
        Scenario sc;
        sc.label = text(need(scs[i], f, "label"), f + ".label");
        const std::string role = scs[i].contains("role") ? text(scs[i].at("role"), f + ".role") : "null";
        if (role == "null") {
            sc.role = Role::Null;
        } else if (role == "alt") {
            sc.role = Role::Alt;
        } else {
            throw ConfigError(f + ".role", "must be 'null' or 'alt'");
        }
        const json& th = need(scs[i], f, "theta");
        if (!th.is_array()) throw ConfigError(f + ".theta", "must be an array");
        for (const auto& v : th) sc.theta.push_back(number(v, f + ".theta"));
        s.scenarios.push_back(std::move(sc));
    }

    const json& ds = need(j, "", "designs");
    if (!ds.is_array()) throw ConfigError("designs", "must be an array");
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const std::string f = "designs[" + std::to_string(i) + "]";
        const json& d = ds[i];
        allow_keys(d, f, {"label", "policy", "epsilon", "epsilon1", "epsilon2", "delta", "theta_low", "kappa",
                          "burn_in", "rho", "theta_high", "continue_after_control_drop"});
        DesignParams p;
        p.label = text(need(d, f, "label"), f + ".label");
        p.policy = parse_policy(text(need(d, f, "policy"), f + ".policy"), f + ".policy");
        p.epsilon = number_or(d, f, "epsilon", 0.0);
        p.epsilon1 = number_or(d, f, "epsilon1", 0.0);
        p.epsilon2 = number_or(d, f, "epsilon2", 0.0);
        p.delta = number_or(d, f, "delta", 0.0);
        p.theta_low = number_or(d, f, "theta_low", 0.0);
        p.kappa = number_or(d, f, "kappa", 1.0);
        p.rho = number_or(d, f, "rho", 1.0);
        p.theta_high = number_or(d, f, "theta_high", INFINITY);
        if (d.contains("burn_in")) p.burn_in = count(d.at("burn_in"), f + ".burn_in");
        if (d.contains("continue_after_control_drop")) {
            if (!d.at("continue_after_control_drop").is_boolean())
                throw ConfigError(f + ".continue_after_control_drop", "must be a boolean");
            p.continue_after_control_drop = d.at("continue_after_control_drop").get<bool>();
        }
        s.designs.push_back(std::move(p));
    }

    if (j.contains("final_tests")) {
        const json& ft = j.at("final_tests");
        if (!ft.is_array()) throw ConfigError("final_tests", "must be an array");
        for (std::size_t i = 0; i < ft.size(); ++i) {
            const std::string f = "final_tests[" + std::to_string(i) + "]";
            allow_keys(ft[i], f, {"label", "variant", "epsilon0", "delta0"});
            FinalTest t;
            t.variant = ft[i].contains("variant")
                            ? parse_variant(text(ft[i].at("variant"), f + ".variant"), f + ".variant")
                            : FinalVariant::Original;
            t.label = ft[i].contains("label") ? text(ft[i].at("label"), f + ".label") : to_string(t.variant);
            t.epsilon0 = number_or(ft[i], f, "epsilon0", 0.05);
            t.delta0 = number_or(ft[i], f, "delta0", 0.05);
            s.final_tests.push_back(std::move(t));
        }
    }

    auto counts = [&](const char* key, std::vector<std::uint64_t>& out) {
        if (!j.contains(key)) return;
        const json& v = j.at(key);
        if (v.is_array()) {
            for (const auto& x : v) out.push_back(count(x, key));
        } else {
            out.push_back(count(v, key));
        }
    };
    counts("n_max", s.n_max);
    counts("checkpoints", s.checkpoints);
    if (j.contains("replicates")) s.replicates = count(j.at("replicates"), "replicates");
    if (j.contains("master_seed")) s.master_seed = count(j.at("master_seed"), "master_seed");
    if (j.contains("keep_verdicts")) {
        if (!j.at("keep_verdicts").is_boolean()) throw ConfigError("keep_verdicts", "must be a boolean");
        s.keep_verdicts = j.at("keep_verdicts").get<bool>();
    }

    if (j.contains("estimator")) {
        const json& e = j.at("estimator");
        allow_keys(e, "estimator", {"method", "draws", "quadrature_nodes"});
        if (e.contains("method")) s.estimator.kind = parse_estimator(text(e.at("method"), "estimator.method"), "estimator.method");
        if (e.contains("draws")) s.estimator.draws = count(e.at("draws"), "estimator.draws");
        if (e.contains("quadrature_nodes"))
            s.estimator.quadrature_nodes = count(e.at("quadrature_nodes"), "estimator.quadrature_nodes");
    }
    if (j.contains("bands")) {
        const json& b = j.at("bands");
        if (!b.is_array()) throw ConfigError("bands", "must be an array");
        for (const auto& x : b) s.bands.push_back(parse_band(text(x, "bands"), "bands"));
    }
    if (j.contains("arrival")) {
        const json& a = j.at("arrival");
        allow_keys(a, "arrival", {"rate", "delay", "end_of_study"});
        s.arrival_rate = number_or(a, "arrival", "rate", 1.0);
        s.delay = number_or(a, "arrival", "delay", 0.0);
        s.end_of_study = number_or(a, "arrival", "end_of_study", INFINITY);
    }
    if (j.contains("vaccine") && !j.at("vaccine").is_null()) {
        const json& v = j.at("vaccine");
        allow_keys(v, "vaccine", {"ve_star", "epsilon1"});
        s.vaccine = VaccineCheck{number_or(v, "vaccine", "ve_star", 0.0), number_or(v, "vaccine", "epsilon1", 0.01)};
    }
    if (j.contains("outputs")) {
        const json& o = j.at("outputs");
        allow_keys(o, "outputs", {"directory", "families"});
        if (o.contains("directory")) cfg.outputs.directory = text(o.at("directory"), "outputs.directory");
        if (o.contains("families")) {
            cfg.outputs.families.clear();
            for (const auto& x : o.at("families")) {
                const auto f = text(x, "outputs.families");
                if (f != "summary" && f != "band" && f != "cdf" && f != "verdict")
                    throw ConfigError("outputs.families", "unknown family '" + f + "' (summary, band, cdf, verdict)");
                cfg.outputs.families.push_back(f);
            }
        }
    }
    validate(s);
    return cfg;
}

inline ExperimentConfig parse_config(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config", std::string("invalid JSON: ") + e.what());
    }
    return parse_config(j);
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("config", "cannot read " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str());
}

/// Fully resolved configuration; parsing it again gives the same spec.
inline nlohmann::json to_json(const ExperimentConfig& cfg) {
    using namespace config_detail;
    const ExperimentSpec& s = cfg.spec;
    json j;
    j["schema_version"] = config_schema_version;
    j["name"] = s.name;
    j["model"] = to_string(s.model);
    j["num_arms"] = s.num_arms;
    json priors = json::array();
    if (s.model == Model::TimeToEvent) {
        for (const auto& p : s.gamma_priors) priors.push_back({{"shape", p.shape}, {"rate", p.rate}});
    } else {
        for (const auto& p : s.beta_priors) priors.push_back({{"alpha", p.alpha}, {"beta", p.beta}});
    }
    j["priors"] = priors;
    json scs = json::array();
    for (const auto& sc : s.scenarios) {
        scs.push_back({{"label", sc.label}, {"role", sc.role == Role::Null ? "null" : "alt"}, {"theta", sc.theta}});
    }
    j["scenarios"] = scs;
    json ds = json::array();
    for (const auto& d : s.designs) {
        ds.push_back({{"label", d.label},
                      {"policy", to_string(d.policy)},
                      {"epsilon", d.epsilon},
                      {"epsilon1", d.epsilon1},
                      {"epsilon2", d.epsilon2},
                      {"delta", d.delta},
                      {"theta_low", d.theta_low},
                      {"kappa", d.kappa},
                      {"burn_in", d.burn_in},
                      {"rho", d.rho},
                      {"theta_high", number_json(d.theta_high)},
                      {"continue_after_control_drop", d.continue_after_control_drop}});
    }
    j["designs"] = ds;
    json ft = json::array();
    for (const auto& t : s.final_tests) {
        ft.push_back({{"label", t.label}, {"variant", to_string(t.variant)}, {"epsilon0", t.epsilon0}, {"delta0", t.delta0}});
    }
    j["final_tests"] = ft;
    j["n_max"] = s.n_max;
    j["checkpoints"] = s.checkpoints;
    j["replicates"] = s.replicates;
    j["master_seed"] = s.master_seed;
    j["keep_verdicts"] = s.keep_verdicts;
    j["estimator"] = {{"method", estimator_name(s.estimator.kind)},
                      {"draws", s.estimator.draws},
                      {"quadrature_nodes", s.estimator.quadrature_nodes}};
    json bands = json::array();
    for (auto b : s.bands) bands.push_back(to_string(b));
    j["bands"] = bands;
    j["arrival"] = {{"rate", s.arrival_rate}, {"delay", s.delay}, {"end_of_study", number_json(s.end_of_study)}};
    if (s.vaccine) {
        j["vaccine"] = {{"ve_star", s.vaccine->ve_star}, {"epsilon1", s.vaccine->epsilon1}};
    }
    j["outputs"] = {{"directory", cfg.outputs.directory}, {"families", cfg.outputs.families}};
    return j;
}

}  // namespace ate
