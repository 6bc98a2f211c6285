#pragma once

// CSV ingestion: header `device_id,feature_0,...,feature_{d-1},label`,
// decimal point '.', no quoting. Rows are partitioned by device id in file
// order and each partition is split 60/20/20 into train/validation/test.

#include "fedcond/errors.hpp"
#include "fedcond/streams.hpp"
#include "fedcond/text.hpp"

#include <charconv>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace fedcond {

struct CsvSchema {
  // Devices are 0..num_devices-1; 0 infers max(device_id) + 1.
  int num_devices = 0;
  bool classification = true;
  int num_classes = 2;
  std::size_t samples_per_round = 10;
  std::uint64_t seed = 1;
};


/// One StreamSpec per device, backed by the parsed rows.
inline std::vector<StreamSpec> load_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw ParseError(path, 0, "cannot open file");
  if (schema.samples_per_round == 0) throw ConfigError("csv: samples_per_round must be positive");

  std::string line;
  if (!std::getline(in, line)) throw ParseError(path, 1, "missing header row");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = detail::split(line, ',');
  if (header.size() < 3) throw ParseError(path, 1, "header needs device_id, at least one feature column and label");
  if (detail::trim(header.front()) != "device_id") throw ParseError(path, 1, "missing column 'device_id' (first column)");
  if (detail::trim(header.back()) != "label") throw ParseError(path, 1, "missing column 'label' (last column)");
  const std::size_t dim = header.size() - 2;
  for (std::size_t j = 0; j < dim; ++j) {
    const std::string expected = "feature_" + std::to_string(j);
    if (detail::trim(header[j + 1]) != expected)
      throw ParseError(path, 1, "missing column '" + expected + "' (found '" + std::string(detail::trim(header[j + 1])) + "')");
  }

  struct Rows {
    std::vector<double> x, y;
  };
  std::map<int, Rows> by_device;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split(line, ',');
    if (cells.size() != header.size())
      throw ParseError(path, line_no, "expected " + std::to_string(header.size()) + " cells, found " + std::to_string(cells.size()));
    double id = 0;
    if (!detail::parse_double(cells[0], id) || id < 0 || std::floor(id) != id)
      throw ParseError(path, line_no, "column 'device_id': not a non-negative integer: '" + std::string(cells[0]) + "'");
    Rows& rows = by_device[static_cast<int>(id)];
    for (std::size_t j = 0; j < dim; ++j) {
      double v = 0;
      if (!detail::parse_double(cells[j + 1], v))
        throw ParseError(path, line_no, "column 'feature_" + std::to_string(j) + "': non-numeric value '" + std::string(cells[j + 1]) + "'");
      rows.x.push_back(v);
    }
    double label = 0;
    if (!detail::parse_double(cells.back(), label))
      throw ParseError(path, line_no, "column 'label': non-numeric value '" + std::string(cells.back()) + "'");
    if (schema.classification && (std::floor(label) != label || label < 0 || label >= schema.num_classes))
      throw ParseError(path, line_no, "column 'label': " + std::string(detail::trim(cells.back())) + " is not a class index below " +
                                          std::to_string(schema.num_classes));
    rows.y.push_back(label);
  }

  int num_devices = schema.num_devices;
  if (num_devices == 0) num_devices = by_device.empty() ? 0 : by_device.rbegin()->first + 1;
  if (num_devices == 0) throw ParseError(path, line_no, "no data rows");
  if (!by_device.empty() && by_device.rbegin()->first >= num_devices)
    throw ParseError(path, line_no, "device " + std::to_string(by_device.rbegin()->first) + " exceeds the declared device count");

  std::vector<StreamSpec> specs;
  for (int d = 0; d < num_devices; ++d) {
    const auto it = by_device.find(d);
    const std::size_t n = it == by_device.end() ? 0 : it->second.y.size();
    if (n < 3) throw ParseError(path, line_no, "device " + std::to_string(d) + " has " + std::to_string(n) + " rows; at least 3 needed for the 60/20/20 split");
    const Rows& rows = it->second;
    const std::size_t n_train = n * 6 / 10 == 0 ? 1 : n * 6 / 10;
    const std::size_t n_val = n * 2 / 10;
    const std::size_t n_test = n - n_train - n_val;
    if (n_test == 0) throw ParseError(path, line_no, "device " + std::to_string(d) + " has no rows left for its test split");

    auto data = std::make_shared<CsvDeviceData>();
    data->device_id = d;
    const auto all_x = Eigen::Map<const FeatureMatrix>(rows.x.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
    const auto all_y = Eigen::Map<const Eigen::VectorXd>(rows.y.data(), static_cast<Eigen::Index>(n));
    const auto tr = static_cast<Eigen::Index>(n_train), va = static_cast<Eigen::Index>(n_val), te = static_cast<Eigen::Index>(n_test);
    data->train_x = all_x.topRows(tr);
    data->train_y = all_y.head(tr);
    data->validation_x = all_x.middleRows(tr, va);
    data->validation_y = all_y.segment(tr, va);
    data->test_x = all_x.bottomRows(te);
    data->test_y = all_y.tail(te);

    StreamSpec spec;
    spec.source = StreamSource::csv_file;
    spec.input_dim = static_cast<int>(dim);
    spec.num_classes = schema.num_classes;
    spec.samples_per_round = schema.samples_per_round;
    spec.total_rounds = (n_train + schema.samples_per_round - 1) / schema.samples_per_round;
    spec.seed = derive_seed(schema.seed, {static_cast<std::uint64_t>(d)});
    spec.concept_seed = schema.seed;
    spec.csv = std::move(data);
    specs.push_back(std::move(spec));
  }
  return specs;
}

}  // namespace fedcond
