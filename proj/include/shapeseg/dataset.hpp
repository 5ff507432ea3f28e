#pragma once

// Dataset directory layout: images as single-channel binary grids under
// images/, one CSV manifest with pose, landmarks and analytic measures per
// sample, and a JSON descriptor with the generator settings and content hash.

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "shapeseg/grid_io.hpp"
#include "shapeseg/phantom.hpp"
#include "shapeseg/util.hpp"

namespace shapeseg {

namespace detail {

inline std::string sample_image_name(int id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "s%05d.sdm", id);
  return buf;
}

inline std::string manifest_csv(const PhantomDataset& ds) {
  const int n = ds.spec.n_landmarks;
  std::string csv = "id,patient,fold,theta,cx,cy";
  for (const char* block : {"x_endo", "x_epi", "y_endo", "y_epi"}) {
    for (int k = 0; k < n; ++k) csv += "," + std::string(block) + "_" + std::to_string(k);
  }
  csv += ",area_lv,area_myo,dim_0,dim_1,dim_2";
  for (int s = 0; s < 6; ++s) csv += ",rwt_" + std::to_string(s);
  csv += "\n";
  for (const PhantomSample& s : ds.samples) {
    csv += std::to_string(s.id) + "," + std::to_string(s.patient) + "," + std::to_string(s.fold);
    for (double v : {s.pose.theta, s.pose.cx, s.pose.cy}) csv += "," + format_g17(v);
    const ShapeVector vec = to_shape_vector(s.shape);
    for (Eigen::Index i = 0; i < vec.size(); ++i) csv += "," + format_g17(vec[i]);
    csv += "," + format_g17(s.measures.area_lv) + "," + format_g17(s.measures.area_myo);
    for (double v : s.measures.dims) csv += "," + format_g17(v);
    for (double v : s.measures.rwt) csv += "," + format_g17(v);
    csv += "\n";
  }
  return csv;
}

}  // namespace detail

inline std::string dataset_hash(const PhantomDataset& ds) {
  Fnv1a hash;
  hash.update(detail::manifest_csv(ds));
  for (const PhantomSample& s : ds.samples) {
    GridData g;
    g.grid = ds.spec.grid;
    g.channels = 1;
    g.values = s.image;
    hash.update(encode_grid(g));
  }
  return hash.hex();
}

inline void save_dataset(const PhantomDataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "images");
  write_file(dir / "manifest.csv", detail::manifest_csv(ds));
  for (const PhantomSample& s : ds.samples) {
    GridData g;
    g.grid = ds.spec.grid;
    g.channels = 1;
    g.values = s.image;
    save_grid(g, dir / "images" / detail::sample_image_name(s.id));
  }
  nlohmann::json j;
  j["version"] = 1;
  j["seed"] = ds.seed;
  j["count"] = ds.samples.size();
  j["folds"] = ds.folds;
  j["n_landmarks"] = ds.spec.n_landmarks;
  j["slices_per_patient"] = ds.spec.slices_per_patient;
  j["grid"] = {{"height", ds.spec.grid.height},
               {"width", ds.spec.grid.width},
               {"pixel_size", ds.spec.grid.pixel_size}};
  j["hash"] = dataset_hash(ds);
  write_file(dir / "dataset.json", j.dump(2) + "\n");
}

inline PhantomDataset load_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "dataset.json"))
    throw ConfigError("dataset: missing " + (dir / "dataset.json").string());
  const nlohmann::json j = nlohmann::json::parse(read_file(dir / "dataset.json"));
  if (j.at("version").get<int>() != 1) throw ConfigError("dataset: unsupported version");

  PhantomDataset ds;
  ds.seed = j.at("seed").get<std::uint64_t>();
  ds.folds = j.at("folds").get<int>();
  ds.spec.n_landmarks = j.at("n_landmarks").get<int>();
  ds.spec.slices_per_patient = j.at("slices_per_patient").get<int>();
  ds.spec.grid.height = j.at("grid").at("height").get<int>();
  ds.spec.grid.width = j.at("grid").at("width").get<int>();
  ds.spec.grid.pixel_size = j.at("grid").at("pixel_size").get<double>();

  const int n = ds.spec.n_landmarks;
  const std::string csv = read_file(dir / "manifest.csv");
  const auto lines = split(csv, '\n');
  if (lines.size() < 2) throw ConfigError("dataset: empty manifest");
  const std::size_t expected_cols = 6 + 4 * static_cast<std::size_t>(n) + 11;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    if (trim(lines[li]).empty()) continue;
    const auto cols = split(lines[li], ',');
    if (cols.size() != expected_cols)
      throw ConfigError("dataset: manifest row has " + std::to_string(cols.size()) +
                        " columns, expected " + std::to_string(expected_cols));
    PhantomSample s;
    std::size_t c = 0;
    s.id = std::stoi(cols[c++]);
    s.patient = std::stoi(cols[c++]);
    s.fold = std::stoi(cols[c++]);
    const double theta = std::stod(cols[c++]);
    const double cx = std::stod(cols[c++]);
    const double cy = std::stod(cols[c++]);
    s.pose = PoseParams(theta, cx, cy);
    ShapeVector vec(4 * n);
    for (int i = 0; i < 4 * n; ++i) vec[i] = std::stod(cols[c++]);
    s.shape = from_shape_vector(vec);
    s.measures.area_lv = std::stod(cols[c++]);
    s.measures.area_myo = std::stod(cols[c++]);
    for (double& v : s.measures.dims) v = std::stod(cols[c++]);
    for (double& v : s.measures.rwt) v = std::stod(cols[c++]);

    const GridData g = load_grid(dir / "images" / detail::sample_image_name(s.id));
    if (g.grid.height != ds.spec.grid.height || g.grid.width != ds.spec.grid.width ||
        g.channels != 1)
      throw ConfigError("dataset: image grid mismatch for sample " + std::to_string(s.id));
    s.image = g.values;
    ds.samples.push_back(std::move(s));
  }
  if (ds.samples.empty()) throw ConfigError("dataset: no samples");
  return ds;
}

// Shape vectors of a fold subset, pose-normalized, for shape model fitting.
inline std::vector<ShapeVector> normalized_shapes(const PhantomDataset& ds,
                                                  const std::vector<int>& folds_to_use) {
  std::vector<ShapeVector> out;
  for (const PhantomSample& s : ds.samples) {
    if (std::find(folds_to_use.begin(), folds_to_use.end(), s.fold) == folds_to_use.end())
      continue;
    out.push_back(normalize_pose(s.shape, s.pose));
  }
  return out;
}

}  // namespace shapeseg
