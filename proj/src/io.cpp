#include "ilsc/io.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <map>
#include <stdexcept>

#include <json.hpp>

namespace ilsc {

namespace {

using nlohmann::json;

FILE* open_or_throw(const std::string& path, const char* mode) {
    FILE* f = std::fopen(path.c_str(), mode);
    if (!f) throw std::runtime_error("io: cannot open '" + path + "'");
    return f;
}

// Finite doubles serialize as numbers; +-inf as +-1e308 sentinels so JSON
// round-trips.
json finite_or_sentinel(double v) {
    if (std::isfinite(v)) return v;
    if (std::isinf(v)) return v > 0 ? 1e308 : -1e308;
    return nullptr;
}

}  // namespace

void dump_tensor_csv(const std::vector<CMat>& tensor, const std::string& path) {
    FILE* f = open_or_throw(path, "w");
    std::fprintf(f, "m,row,col,re,im\n");
    for (std::size_t m = 0; m < tensor.size(); ++m) {
        const CMat& h = tensor[m];
        for (Eigen::Index r = 0; r < h.rows(); ++r) {
            for (Eigen::Index c = 0; c < h.cols(); ++c) {
                std::fprintf(f, "%zu,%lld,%lld,%.17g,%.17g\n", m + 1,
                             static_cast<long long>(r), static_cast<long long>(c),
                             h(r, c).real(), h(r, c).imag());
            }
        }
    }
    std::fclose(f);
}

std::vector<CMat> load_tensor_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("io: cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("io: empty tensor file");

    struct Entry {
        long long r, c;
        cplx v;
    };
    std::map<std::size_t, std::vector<Entry>> per_m;
    long long max_r = -1, max_c = -1;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::size_t m = 0;
        long long r = 0, c = 0;
        double re = 0.0, im = 0.0;
        if (std::sscanf(line.c_str(), "%zu,%lld,%lld,%lf,%lf", &m, &r, &c, &re, &im) != 5) {
            throw std::runtime_error("io: bad tensor line '" + line + "'");
        }
        if (m < 1) throw std::runtime_error("io: tensor subcarrier index must be >= 1");
        per_m[m - 1].push_back({r, c, cplx(re, im)});
        max_r = std::max(max_r, r);
        max_c = std::max(max_c, c);
    }
    if (per_m.empty()) throw std::runtime_error("io: tensor file has no entries");
    const std::size_t m_count = per_m.rbegin()->first + 1;
    std::vector<CMat> out(m_count, CMat::Zero(max_r + 1, max_c + 1));
    for (const auto& [m, entries] : per_m) {
        for (const Entry& e : entries) out[m](e.r, e.c) = e.v;
    }
    return out;
}

void dump_channel(const ChannelTensor& channel, const std::string& path) {
    dump_tensor_csv(channel.h, path);
}

ChannelTensor load_channel(const std::string& path, bool downlink) {
    ChannelTensor out;
    out.h = load_tensor_csv(path);
    out.downlink = downlink;
    return out;
}

void dump_measurements(const MeasurementSet& set, const std::string& path) {
    dump_tensor_csv(set.y, path);
}

void dump_estimate(const SparseChannelEstimate& estimate, const std::string& path) {
    dump_tensor_csv(estimate.h_polar, path);
    json meta;
    meta["noise_var"] = estimate.noise_var;
    meta["iterations"] = estimate.iterations;
    meta["converged"] = estimate.converged;
    std::vector<double> lam(estimate.support_prob.data(),
                            estimate.support_prob.data() + estimate.support_prob.size());
    meta["support_prob"] = lam;
    std::ofstream out(path + ".meta.json");
    if (!out) throw std::runtime_error("io: cannot open '" + path + ".meta.json'");
    out << meta.dump(2) << "\n";
}

std::string location_report_to_json(const LocationReport& report) {
    json j;
    j["l_hat"] = report.l_hat;
    j["los_present"] = report.los_present;
    j["coarse"] = {{"x", report.coarse_x}, {"y", report.coarse_y}, {"phi", report.phi_hat}};
    j["los_only"] = {{"x", finite_or_sentinel(report.los_only_x)},
                     {"y", finite_or_sentinel(report.los_only_y)}};
    j["refined"] = {{"x", report.refined_x}, {"y", report.refined_y}};
    j["vas"] = json::array();
    for (const VaRecord& va : report.vas) {
        j["vas"].push_back({{"theta_bs", va.theta_bs},
                            {"r_bs", finite_or_sentinel(va.r_bs)},
                            {"x", finite_or_sentinel(va.x)},
                            {"y", finite_or_sentinel(va.y)},
                            {"energy", va.energy},
                            {"theta_ut", va.theta_ut},
                            {"class", va.cls == VaClass::kSubarrayCenter ? "subarray_center"
                                                                         : "scatterer"},
                            {"far_field", va.far_field},
                            {"lattice_index", va.lattice_index}});
    }
    j["tdoa"] = report.tdoa;
    j["tdoa_period"] = report.tdoa_period;
    j["solver_positions"] = json::array();
    for (const auto& [x, y] : report.solver_positions) {
        j["solver_positions"].push_back({{"x", finite_or_sentinel(x)}, {"y", finite_or_sentinel(y)}});
    }
    j["refined_scatterers"] = json::array();
    for (const auto& [x, y] : report.refined_scatterers) {
        j["refined_scatterers"].push_back({{"x", finite_or_sentinel(x)}, {"y", finite_or_sentinel(y)}});
    }
    j["loss_trace"] = report.loss_trace;
    j["flags"] = report.flags;
    return j.dump(2);
}

void dump_location_report(const LocationReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("io: cannot open '" + path + "'");
    out << location_report_to_json(report) << "\n";
}

LocationReport load_location_report(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("io: cannot open '" + path + "'");
    json j;
    in >> j;
    LocationReport report;
    report.l_hat = j.at("l_hat").get<int>();
    report.los_present = j.at("los_present").get<bool>();
    report.coarse_x = j.at("coarse").at("x").get<double>();
    report.coarse_y = j.at("coarse").at("y").get<double>();
    report.phi_hat = j.at("coarse").at("phi").get<double>();
    report.los_only_x = j.at("los_only").at("x").get<double>();
    report.los_only_y = j.at("los_only").at("y").get<double>();
    report.refined_x = j.at("refined").at("x").get<double>();
    report.refined_y = j.at("refined").at("y").get<double>();
    for (const auto& v : j.at("vas")) {
        VaRecord va;
        va.theta_bs = v.at("theta_bs").get<double>();
        va.r_bs = v.at("r_bs").get<double>();
        if (va.r_bs >= 1e308) va.r_bs = kInf;
        va.x = v.at("x").get<double>();
        va.y = v.at("y").get<double>();
        va.energy = v.at("energy").get<double>();
        va.theta_ut = v.at("theta_ut").get<double>();
        va.cls = v.at("class").get<std::string>() == "subarray_center" ? VaClass::kSubarrayCenter
                                                                       : VaClass::kScatterer;
        va.far_field = v.at("far_field").get<bool>();
        va.lattice_index = v.at("lattice_index").get<int>();
        report.vas.push_back(va);
    }
    report.tdoa = j.at("tdoa").get<std::vector<double>>();
    if (j.contains("tdoa_period")) report.tdoa_period = j["tdoa_period"].get<double>();
    if (j.contains("solver_positions")) {
        for (const auto& s2 : j["solver_positions"]) {
            report.solver_positions.emplace_back(s2.at("x").get<double>(), s2.at("y").get<double>());
        }
    }
    for (const auto& s : j.at("refined_scatterers")) {
        report.refined_scatterers.emplace_back(s.at("x").get<double>(), s.at("y").get<double>());
    }
    report.loss_trace = j.at("loss_trace").get<std::vector<double>>();
    report.flags = j.at("flags").get<std::vector<std::string>>();
    return report;
}

void dump_se_csv(const RVec& se_per_subcarrier, const std::vector<double>& freqs,
                 const std::string& path) {
    if (freqs.size() != static_cast<std::size_t>(se_per_subcarrier.size())) {
        throw std::invalid_argument("dump_se_csv: frequency list mismatch");
    }
    FILE* f = open_or_throw(path, "w");
    std::fprintf(f, "m,f_m,se\n");
    for (Eigen::Index m = 0; m < se_per_subcarrier.size(); ++m) {
        std::fprintf(f, "%lld,%.10g,%.10g\n", static_cast<long long>(m + 1),
                     freqs[static_cast<std::size_t>(m)], se_per_subcarrier(m));
    }
    std::fclose(f);
}

}  // namespace ilsc
