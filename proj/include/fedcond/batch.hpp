#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <vector>

namespace fedcond {

using ParamVector = Eigen::VectorXd;
using FeatureMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using FeaturesRef = Eigen::Ref<const FeatureMatrix>;
using LabelsRef = Eigen::Ref<const Eigen::VectorXd>;

/// One round's worth of samples from a device stream. Labels hold class
/// indices (as doubles) for classification and targets for regression.
struct StreamBatch {
  FeatureMatrix features;
  Eigen::VectorXd labels;
  std::size_t round_index = 0;
  // 1 where the row was drawn from the post-drift concept (gradual drift).
  std::vector<std::uint8_t> from_new_concept;

  Eigen::Index rows() const { return features.rows(); }
  bool operator==(const StreamBatch&) const = default;
};

inline bool all_finite(const Eigen::Ref<const Eigen::VectorXd>& v) { return v.allFinite(); }

}  // namespace fedcond
