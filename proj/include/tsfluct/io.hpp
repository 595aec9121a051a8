#pragma once

#include "tsfluct/common.hpp"
#include "tsfluct/engine.hpp"
#include "tsfluct/fluct.hpp"
#include "tsfluct/limit.hpp"
#include "tsfluct/verify.hpp"

#include <json.hpp>

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

namespace tsfluct {

namespace io_detail {

// %.17g keeps doubles bit-faithful across writes, so identical runs give
// identical bytes.
inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open output file '" + path + "'");
    return out;
}

}  // namespace io_detail

// columns: n, component, value. Components 0..d1-1 are x, then d1..d1+d2-1
// are y, and the last one is the Markov state.
inline void write_trajectory_csv(const std::string& path, const Trajectory& traj) {
    auto out = io_detail::open_out(path);
    out << "n,component,value\n";
    for (index_t n = traj.n_start; n < traj.n_end; ++n) {
        const Vec& x = traj.x(n);
        const Vec& y = traj.y(n);
        int comp = 0;
        for (int c = 0; c < x.size(); ++c)
            out << n << ',' << comp++ << ',' << io_detail::fmt(x[c]) << '\n';
        for (int c = 0; c < y.size(); ++c)
            out << n << ',' << comp++ << ',' << io_detail::fmt(y[c]) << '\n';
        out << n << ',' << comp << ',' << traj.markov_state(n) << '\n';
    }
}

inline const char* clock_name(Clock c) { return c == Clock::Fast ? "fast" : "slow"; }

// columns: anchor_n, clock, t_offset, component, value
inline void write_paths_csv(const std::string& path, const std::vector<FluctuationPath>& paths) {
    auto out = io_detail::open_out(path);
    out << "anchor_n,clock,t_offset,component,value\n";
    for (const auto& p : paths) {
        for (std::size_t k = 0; k < p.knot_times.size(); ++k)
            for (int c = 0; c < p.knot_values[k].size(); ++c)
                out << p.anchor << ',' << clock_name(p.clock) << ','
                    << io_detail::fmt(p.knot_times[k]) << ',' << c << ','
                    << io_detail::fmt(p.knot_values[k][c]) << '\n';
    }
}

// columns: t, row, col, value
inline void write_covariance_csv(const std::string& path, const CovarianceCurve& curve) {
    auto out = io_detail::open_out(path);
    out << "t,row,col,value\n";
    for (std::size_t k = 0; k < curve.times.size(); ++k)
        for (int r = 0; r < curve.sigmas[k].rows(); ++r)
            for (int c = 0; c < curve.sigmas[k].cols(); ++c)
                out << io_detail::fmt(curve.times[k]) << ',' << r << ',' << c << ','
                    << io_detail::fmt(curve.sigmas[k](r, c)) << '\n';
}

// columns: anchor, t, row, col, empirical, theoretical
inline void write_comparison_csv(const std::string& path, const VerificationReport& rep) {
    auto out = io_detail::open_out(path);
    out << "anchor,t,row,col,empirical,theoretical\n";
    for (const auto& ar : rep.anchors)
        for (const auto& g : ar.curve)
            for (int r = 0; r < g.emp_cov.rows(); ++r)
                for (int c = 0; c < g.emp_cov.cols(); ++c)
                    out << ar.anchor << ',' << io_detail::fmt(g.t) << ',' << r << ',' << c
                        << ',' << io_detail::fmt(g.emp_cov(r, c)) << ','
                        << io_detail::fmt(g.th_cov(r, c)) << '\n';
}

inline nlohmann::json to_json(const GaussianityStats& gs) {
    nlohmann::json j;
    j["count"] = gs.count;
    j["skewness"] = std::vector<double>(gs.skewness.data(),
                                        gs.skewness.data() + gs.skewness.size());
    j["excess_kurtosis"] = std::vector<double>(
        gs.excess_kurtosis.data(), gs.excess_kurtosis.data() + gs.excess_kurtosis.size());
    j["applicable"] = gs.applicable;
    return j;
}

inline nlohmann::json matrix_json(const Mat& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (int r = 0; r < m.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(row);
    }
    return rows;
}

inline nlohmann::json vector_json(const Vec& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
}

inline nlohmann::json to_json(const ScheduleDiagnostics& d) {
    nlohmann::json j;
    j["phi"] = d.phi.value;
    j["phi_converged"] = d.phi.converged;
    j["vartheta"] = d.vartheta.value;
    j["vartheta_converged"] = d.vartheta.converged;
    j["ordering_ok"] = d.ordering_ok;
    j["fast_monotone_ok"] = d.fast_monotone_ok;
    j["ratio_decreasing"] = d.ratio_check.decile_decreasing;
    j["ratio_first_decile"] = d.ratio_check.first_decile_mean;
    j["ratio_last_decile"] = d.ratio_check.last_decile_mean;
    j["ratio_final_below_tenth"] = d.ratio_check.final_below_tenth;
    j["bn_omega_decreasing"] = d.bn_omega_check.decile_decreasing;
    j["bn_omega_first_decile"] = d.bn_omega_check.first_decile_mean;
    j["bn_omega_last_decile"] = d.bn_omega_check.last_decile_mean;
    j["zeta_decreasing"] = d.zeta_decreasing;
    nlohmann::json prof = nlohmann::json::array();
    for (const auto& [t, v] : d.zeta_profile) prof.push_back({{"T", t}, {"sup", v}});
    j["zeta_profile"] = prof;
    j["pass_a1"] = d.pass_a1();
    j["pass_a2"] = d.pass_a2();
    j["pass_a3"] = d.pass_a3();
    j["pass_a4"] = d.pass_a4();
    j["pass_a5"] = d.pass_a5();
    return j;
}

inline nlohmann::json to_json(const MomentDiagnostics& m) {
    nlohmann::json j;
    j["checkpoints"] = m.checkpoints;
    j["u4"] = m.u4;
    j["u4_se"] = m.u4_se;
    j["x4"] = m.x4;
    j["x4_se"] = m.x4_se;
    j["u4_bounded"] = m.u4_bounded;
    j["x4_bounded"] = m.x4_bounded;
    return j;
}

inline nlohmann::json to_json(const VerificationReport& rep, const nlohmann::json& config_echo,
                              const std::string& timestamp) {
    nlohmann::json j;
    // the timestamp lives only here in the header; everything below is a
    // deterministic function of config and seed
    j["generated_at"] = timestamp;
    j["experiment"] = rep.experiment;
    j["problem"] = rep.problem;
    j["trajectories"] = rep.trajectories;
    j["T"] = rep.T;
    j["seed"] = rep.seed;
    j["config"] = config_echo;
    j["tolerances"] = {{"rel_frobenius", rep.tol.rel_frobenius},
                       {"mean_sigmas", rep.tol.mean_sigmas},
                       {"mc_sigmas", rep.tol.mc_sigmas},
                       {"kurtosis_band", rep.tol.kurtosis_band},
                       {"noise_floor", rep.tol.noise_floor}};
    j["schedule"] = to_json(rep.schedule);
    j["phi_used"] = rep.phi_used;
    j["theorem3_regime"] = rep.theorem3_regime;
    if (rep.y_star_used.size() > 0) j["y_star_used"] = vector_json(rep.y_star_used);

    nlohmann::json anchors = nlohmann::json::array();
    for (const auto& ar : rep.anchors) {
        nlohmann::json a;
        a["anchor"] = ar.anchor;
        a["rel_err_at_T"] = ar.rel_err_at_T;
        a["mc_floor_rel"] = ar.mc_floor_rel;
        a["th_norm_at_T"] = ar.th_norm_at_T;
        a["cov_pass"] = ar.cov_pass;
        a["mean_pass"] = ar.mean_pass;
        a["w_sq_at_T"] = ar.w_sq_at_T;
        if (!ar.curve.empty()) {
            a["emp_mean_at_T"] = vector_json(ar.curve.back().emp_mean);
            a["emp_cov_at_T"] = matrix_json(ar.curve.back().emp_cov);
            a["th_cov_at_T"] = matrix_json(ar.curve.back().th_cov);
        }
        a["normality"] = to_json(ar.normality);
        anchors.push_back(a);
    }
    j["anchors"] = anchors;
    j["bias_decay_ok"] = rep.bias_decay_ok;
    j["w_decreasing"] = rep.w_decreasing;
    if (rep.moments) j["moments"] = to_json(*rep.moments);
    if (rep.clt) {
        nlohmann::json c;
        nlohmann::json recs = nlohmann::json::array();
        for (const auto& r : rep.clt->records)
            recs.push_back({{"n", r.n},
                            {"eta_mean", vector_json(r.eta_mean)},
                            {"eta_cov", matrix_json(r.eta_cov)},
                            {"upsilon_sq", r.upsilon_sq}});
        c["records"] = recs;
        c["eta_th"] = matrix_json(rep.clt->eta_th);
        c["eta_rel_err"] = rep.clt->eta_rel_err;
        c["eta_mc_floor_rel"] = rep.clt->eta_mc_floor_rel;
        c["eta_cov_pass"] = rep.clt->eta_cov_pass;
        c["upsilon_decreasing"] = rep.clt->upsilon_decreasing;
        c["eta_normality"] = to_json(rep.clt->eta_normality);
        c["kurtosis_pass"] = rep.clt->kurtosis_pass;
        j["clt"] = c;
    }
    j["overall_pass"] = rep.overall_pass;
    return j;
}

// Hand-rolled line plot: empirical variance of the first fast component over
// the window, against the theoretical curve with a 3-sigma Monte Carlo band.
inline void write_variance_svg(const std::string& path, const VerificationReport& rep) {
    auto out = io_detail::open_out(path);
    const double width = 640.0, height = 360.0, margin = 48.0;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height * rep.anchors.size() << "\">\n";
    double y_base = 0.0;
    for (const auto& ar : rep.anchors) {
        double vmax = 1e-12;
        for (const auto& g : ar.curve) {
            vmax = std::max(vmax, g.emp_cov(0, 0));
            vmax = std::max(vmax, g.th_cov(0, 0));
        }
        vmax *= 1.15;
        const double t_max = rep.T;
        auto xm = [&](double t) { return margin + (width - 2 * margin) * t / t_max; };
        auto ym = [&](double v) {
            return y_base + height - margin - (height - 2 * margin) * v / vmax;
        };
        auto polyline = [&](auto value, const char* colour, const char* dash) {
            out << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.5\"";
            if (dash[0]) out << " stroke-dasharray=\"" << dash << "\"";
            out << " points=\"";
            for (const auto& g : ar.curve)
                out << io_detail::fmt(xm(g.t)) << ',' << io_detail::fmt(ym(value(g))) << ' ';
            out << "\"/>\n";
        };
        out << "<g>\n";
        out << "<rect x=\"" << margin << "\" y=\"" << y_base + margin << "\" width=\""
            << width - 2 * margin << "\" height=\"" << height - 2 * margin
            << "\" fill=\"none\" stroke=\"#888\"/>\n";
        polyline([](const GridComparison& g) { return g.emp_cov(0, 0); }, "#1f77b4", "");
        polyline([](const GridComparison& g) { return g.th_cov(0, 0); }, "#d62728", "");
        const index_t n = rep.trajectories;
        polyline(
            [n](const GridComparison& g) {
                const double se = std::sqrt(2.0 / static_cast<double>(n)) * g.th_cov(0, 0);
                return g.th_cov(0, 0) + 3.0 * se;
            },
            "#d62728", "4,4");
        polyline(
            [n](const GridComparison& g) {
                const double se = std::sqrt(2.0 / static_cast<double>(n)) * g.th_cov(0, 0);
                return std::max(0.0, g.th_cov(0, 0) - 3.0 * se);
            },
            "#d62728", "4,4");
        out << "<text x=\"" << margin << "\" y=\"" << y_base + margin - 8
            << "\" font-size=\"13\" font-family=\"sans-serif\">anchor n=" << ar.anchor
            << "  Var(u_1) empirical (blue) vs limit (red, 3se band)</text>\n";
        out << "</g>\n";
        y_base += height;
    }
    out << "</svg>\n";
}

}  // namespace tsfluct
