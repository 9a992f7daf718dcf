#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "ate/analysis.hpp"
#include "ate/trial.hpp"

namespace ate::csv {

/// Real number with 9 significant digits; NaN as an empty field.
inline std::string real(double x) {
    if (std::isnan(x)) return "";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", x);
    return buf;
}

inline std::string field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

inline std::ofstream open(const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    return f;
}

inline void write_summary(std::ostream& os, std::vector<SummaryRow> rows) {
    std::sort(rows.begin(), rows.end(), [](const SummaryRow& a, const SummaryRow& b) {
        return std::tie(a.design, a.scenario, a.metric, a.i) < std::tie(b.design, b.scenario, b.metric, b.i);
    });
    os << "design,scenario,metric,i,value,std_error\n";
    for (const auto& r : rows) {
        os << field(r.design) << ',' << field(r.scenario) << ',' << field(r.metric) << ',' << r.i << ','
           << real(r.value) << ',' << real(r.std_error) << '\n';
    }
}

inline void write_bands(std::ostream& os, std::vector<BandRow> rows) {
    std::sort(rows.begin(), rows.end(), [](const BandRow& a, const BandRow& b) {
        return std::tie(a.design, a.scenario, a.event, a.i) < std::tie(b.design, b.scenario, b.event, b.i);
    });
    os << "design,scenario,event,i,probability\n";
    for (const auto& r : rows) {
        os << field(r.design) << ',' << field(r.scenario) << ',' << field(r.event) << ',' << r.i << ','
           << real(r.probability) << '\n';
    }
}

inline void write_cdf(std::ostream& os, std::vector<CdfRow> rows) {
    std::sort(rows.begin(), rows.end(), [](const CdfRow& a, const CdfRow& b) {
        return std::tie(a.design, a.scenario, a.variable, a.i, a.value) <
               std::tie(b.design, b.scenario, b.variable, b.i, b.value);
    });
    os << "design,scenario,variable,i,value,cdf\n";
    for (const auto& r : rows) {
        os << field(r.design) << ',' << field(r.scenario) << ',' << field(r.variable) << ',' << r.i << ','
           << r.value << ',' << real(r.cdf) << '\n';
    }
}

inline void write_verdicts(std::ostream& os, const ExperimentSpec& spec, const std::vector<CellResult>& cells) {
    os << "design,scenario,replicate,i,test,verdict";
    for (std::size_t k = 0; k < spec.num_arms; ++k) os << ",n" << k << "_last";
    os << ",S";
    for (std::size_t k = 0; k < spec.num_arms; ++k) os << ",N_" << k;
    os << '\n';
    std::vector<const CellResult*> order;
    for (const auto& c : cells) order.push_back(&c);
    std::sort(order.begin(), order.end(), [&](const CellResult* a, const CellResult* b) {
        return std::tie(spec.designs[a->design].label, spec.scenarios[a->scenario].label) <
               std::tie(spec.designs[b->design].label, spec.scenarios[b->scenario].label);
    });
    for (const CellResult* c : order) {
        for (const auto& r : c->verdict_rows) {
            os << field(spec.designs[c->design].label) << ',' << field(spec.scenarios[c->scenario].label) << ','
               << r.replicate << ',' << r.i << ',' << field(r.test) << ',' << to_string(r.verdict);
            for (const auto& n : r.n_last) {
                os << ',';
                if (n) os << *n;
            }
            os << ',' << r.successes;
            for (auto n : r.assigned) os << ',' << n;
            os << '\n';
        }
    }
}

/// Per-patient trace; time-to-event traces add t, events_k and ttt_k.
inline void write_trace(std::ostream& os, const TrialTrace& trace, std::size_t replicate, std::size_t arms,
                        bool time_to_event) {
    os << "replicate,i,n,arm,outcome";
    for (std::size_t k = 0; k < arms; ++k) os << ",status_" << k;
    for (std::size_t k = 0; k < arms; ++k) os << ",alpha_" << k;
    for (std::size_t k = 0; k < arms; ++k) os << ",beta_" << k;
    os << ",p_ctrl_margin";
    for (std::size_t k = 0; k < arms; ++k) os << ",p_max_" << k;
    for (std::size_t k = 0; k < arms; ++k) os << ",in_T_" << k;
    if (time_to_event) {
        os << ",t";
        for (std::size_t k = 0; k < arms; ++k) os << ",events_" << k;
        for (std::size_t k = 0; k < arms; ++k) os << ",ttt_" << k;
    }
    os << '\n';
    for (const auto& r : trace.rows) {
        os << replicate << ',' << r.i << ',' << r.n << ',' << r.arm << ',' << real(r.outcome);
        for (auto s : r.status) os << ',' << to_string(s);
        for (double a : r.param_a) os << ',' << real(a);
        for (double b : r.param_b) os << ',' << real(b);
        os << ',' << real(r.p_ctrl_margin);
        for (double p : r.p_max) os << ',' << real(p);
        for (std::size_t k = 0; k < arms; ++k) os << ',' << (((r.candidates >> k) & 1u) ? 1 : 0);
        if (time_to_event) {
            os << ',' << real(r.t);
            for (auto e : r.events) os << ',' << e;
            for (double x : r.exposure) os << ',' << real(x);
        }
        os << '\n';
    }
}

/// Terminal record of a trace: stop reason, final set and drop records.
inline void write_trace_summary(std::ostream& os, const TrialTrace& trace, std::size_t replicate, std::size_t arms) {
    os << "replicate,reason,n,N";
    for (std::size_t k = 0; k < arms; ++k) os << ",in_T_" << k;
    for (std::size_t k = 0; k < arms; ++k) os << ",n" << k << "_last";
    for (std::size_t k = 0; k < arms; ++k) os << ",N" << k << "_last";
    os << '\n';
    os << replicate << ',' << to_string(trace.stop) << ',' << trace.n << ',' << trace.N;
    for (std::size_t k = 0; k < arms; ++k) os << ',' << (((trace.candidates >> k) & 1u) ? 1 : 0);
    for (std::size_t k = 0; k < arms; ++k) {
        os << ',';
        if (trace.drops[k]) os << trace.drops[k]->n_last;
    }
    for (std::size_t k = 0; k < arms; ++k) {
        os << ',';
        if (trace.drops[k]) os << trace.drops[k]->N_last;
    }
    os << '\n';
}

}  // namespace ate::csv
