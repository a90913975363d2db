#pragma once

// Data emission: trajectory/portrait/sweep CSV and JSON reports. Floating
// values are printed with %.17g so that parsing them back reproduces the
// in-memory doubles exactly.

#include "swpll/config.hpp"
#include "swpll/sim.hpp"

#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace swpll {

inline std::string format_g17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline const char* mode_token(ModeTag tag, FsmStage stage = FsmStage::None) {
    switch (tag) {
        case ModeTag::Lti1: return "LTI1";
        case ModeTag::Lti2: return "LTI2";
        case ModeTag::BbpdFsm:
            return stage == FsmStage::Differentiator ? "FSM_DIFF" : "FSM_INT";
        case ModeTag::BbpdNlti: return "BBPD";
    }
    return "?";
}

inline const char* mode_tag_token(ModeTag tag) {
    switch (tag) {
        case ModeTag::Lti1: return "LTI1";
        case ModeTag::Lti2: return "LTI2";
        case ModeTag::BbpdFsm: return "FSM";
        case ModeTag::BbpdNlti: return "BBPD";
    }
    return "?";
}

inline const char* rotation_token(Rotation r) {
    switch (r) {
        case Rotation::Clockwise: return "clockwise";
        case Rotation::CounterClockwise: return "counterclockwise";
        case Rotation::Indeterminate: return "indeterminate";
    }
    return "?";
}

inline const char* subsystem_token(SubsystemId id) {
    switch (id) {
        case SubsystemId::Lti1: return "LTI1";
        case SubsystemId::Lti2: return "LTI2";
        case SubsystemId::IntegratorLti: return "INTEGRATOR_LTI";
        case SubsystemId::IntegratorDifferentiator: return "INTEGRATOR_DIFF";
        case SubsystemId::BbpdNlti: return "BBPD";
    }
    return "?";
}

inline void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
    os << "k,mode,phi,dphi_f,kd,ki_fsm,v1,v3,switch\n";
    for (std::size_t i = 0; i < traj.records.size(); ++i) {
        const auto& r = traj.records[i];
        os << r.k << ',' << mode_token(r.mode, r.stage) << ','
           << format_g17(r.state.phi) << ',' << format_g17(r.state.dphi_f) << ','
           << r.kd << ',' << r.ki_fsm << ',' << format_g17(r.v1) << ','
           << format_g17(r.v3) << ',';
        if (r.switch_event && i > 0) {
            const auto& p = traj.records[i - 1];
            os << mode_token(p.mode, p.stage) << '>' << mode_token(r.mode, r.stage);
        }
        os << '\n';
    }
}

struct CsvRow {
    std::vector<std::string> cells;
};

inline std::vector<CsvRow> parse_csv(std::istream& is) {
    std::vector<CsvRow> rows;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        CsvRow row;
        std::string cell;
        std::stringstream ss(line);
        while (std::getline(ss, cell, ',')) row.cells.push_back(cell);
        if (!line.empty() && line.back() == ',') row.cells.push_back("");
        rows.push_back(std::move(row));
    }
    return rows;
}

inline nlohmann::json report_to_json(const SimReport& report) {
    nlohmann::json j;
    j["schema_version"] = "1";
    if (report.settled_at) {
        j["settled_at"] = *report.settled_at;
    } else {
        j["settled_at"] = nullptr;
    }
    j["diverged"] = report.diverged;
    j["final_mode"] = mode_tag_token(report.final_mode);
    j["rotation"] = rotation_token(report.rotation);
    nlohmann::json chatter;
    chatter["flag"] = report.chatter.chattering;
    chatter["events"] = nlohmann::json::array();
    for (const auto& e : report.chatter.offenders) {
        chatter["events"].push_back({{"k", e.k},
                                     {"from", mode_tag_token(e.from)},
                                     {"to", mode_tag_token(e.to)}});
    }
    j["chattering"] = chatter;
    j["switch_on_traces"] = nlohmann::json::array();
    for (const auto& trace : report.switch_on_traces) {
        nlohmann::json t;
        t["subsystem"] = subsystem_token(trace.subsystem);
        t["values"] = trace.values;
        j["switch_on_traces"].push_back(t);
    }
    return j;
}

struct PortraitRow {
    PllState start;
    std::optional<long> settled_at;
    bool chatter = false;
    ModeTag final_mode = ModeTag::Lti1;
    Rotation rotation = Rotation::Indeterminate;
};

inline void write_portrait_csv(std::ostream& os, const std::vector<PortraitRow>& rows) {
    os << "phi0,dphi0,settled_at,chatter,final_mode,rotation\n";
    for (const auto& r : rows) {
        os << format_g17(r.start.phi) << ',' << format_g17(r.start.dphi_f) << ',';
        if (r.settled_at) os << *r.settled_at;
        os << ',' << (r.chatter ? "true" : "false") << ','
           << mode_tag_token(r.final_mode) << ',' << rotation_token(r.rotation)
           << '\n';
    }
}

struct SweepRow {
    std::vector<double> values;  // one per swept parameter
    std::optional<long> settled_at;
    bool chatter = false;
    double final_v3 = 0.0;
};

inline void write_sweep_csv(std::ostream& os, const std::vector<std::string>& params,
                            const std::vector<SweepRow>& rows) {
    for (const auto& p : params) os << p << ',';
    os << "settled_at,chatter,final_v3\n";
    for (const auto& r : rows) {
        for (double v : r.values) os << format_g17(v) << ',';
        if (r.settled_at) os << *r.settled_at;
        os << ',' << (r.chatter ? "true" : "false") << ',' << format_g17(r.final_v3)
           << '\n';
    }
}

inline nlohmann::json quadratic_form_json(const QuadraticForm& p) {
    return {{"p11", p.p11}, {"p12", p.p12}, {"p22", p.p22}};
}

}  // namespace swpll
