#pragma once

#include <string>
#include <vector>

#include "ilsc/channel.hpp"
#include "ilsc/estimator.hpp"
#include "ilsc/locator.hpp"
#include "ilsc/pilot.hpp"
#include "ilsc/types.hpp"

namespace ilsc {

// Complex tensor dump: CSV with header "m,row,col,re,im", one line per entry,
// m 1-based. The same layout serves channels, measurements, and estimates.
void dump_tensor_csv(const std::vector<CMat>& tensor, const std::string& path);
std::vector<CMat> load_tensor_csv(const std::string& path);

void dump_channel(const ChannelTensor& channel, const std::string& path);
ChannelTensor load_channel(const std::string& path, bool downlink = false);

void dump_measurements(const MeasurementSet& set, const std::string& path);

// Estimate dump plus a JSON sidecar (<path>.meta.json) with the learned
// hyper-parameters.
void dump_estimate(const SparseChannelEstimate& estimate, const std::string& path);

std::string location_report_to_json(const LocationReport& report);
void dump_location_report(const LocationReport& report, const std::string& path);
LocationReport load_location_report(const std::string& path);

// Per-subcarrier spectral efficiency: CSV with header "m,f_m,se".
void dump_se_csv(const RVec& se_per_subcarrier, const std::vector<double>& freqs,
                 const std::string& path);

}  // namespace ilsc
