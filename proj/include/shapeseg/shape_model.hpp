#pragma once

// Pose normalization, PCA statistical shape model, projection and
// reconstruction. Shape vectors are ordered (x_1..x_2N, y_1..y_2N) with the
// endocardial landmarks first in each coordinate block.

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <array>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "shapeseg/geometry.hpp"
#include "shapeseg/util.hpp"

namespace shapeseg {

struct PoseParams {
  double theta = 0.0;  // rad, wrapped to (-pi, pi]
  double cx = 0.0;     // mm
  double cy = 0.0;     // mm

  PoseParams() = default;
  PoseParams(double t, double x, double y) : theta(wrap_angle(t)), cx(x), cy(y) {}
  Point2 center() const { return {cx, cy}; }
};

struct LandmarkShape {
  std::vector<Point2> endo;
  std::vector<Point2> epi;

  int n() const { return static_cast<int>(endo.size()); }

  void validate() const {
    if (endo.size() != epi.size()) throw std::invalid_argument("LandmarkShape: size mismatch");
    if (n() < 8) throw std::invalid_argument("LandmarkShape: N must be >= 8");
    const Contour epi_c = closed_spline(epi);
    for (const Point2& p : endo) {
      if (!point_in_contour(p, epi_c))
        throw std::invalid_argument("LandmarkShape: endo landmark outside epi contour");
    }
  }
};

using ShapeVector = Eigen::VectorXd;        // length 4N
using ShapeCoefficients = Eigen::VectorXd;  // length M, dimensionless

inline ShapeVector to_shape_vector(const LandmarkShape& s) {
  const int n = s.n();
  ShapeVector v(4 * n);
  for (int k = 0; k < n; ++k) {
    v[k] = s.endo[k].x;
    v[n + k] = s.epi[k].x;
    v[2 * n + k] = s.endo[k].y;
    v[3 * n + k] = s.epi[k].y;
  }
  return v;
}

inline LandmarkShape from_shape_vector(const ShapeVector& v) {
  if (v.size() % 4 != 0) throw std::invalid_argument("shape vector length must be 4N");
  const int n = static_cast<int>(v.size() / 4);
  LandmarkShape s;
  s.endo.resize(n);
  s.epi.resize(n);
  for (int k = 0; k < n; ++k) {
    s.endo[k] = {v[k], v[2 * n + k]};
    s.epi[k] = {v[n + k], v[3 * n + k]};
  }
  return s;
}

// Pose normalization: translate by -c, then rotate by [cos, sin; -sin, cos].
inline Point2 normalize_point(const Point2& p, const PoseParams& pose) {
  const double c = std::cos(pose.theta), s = std::sin(pose.theta);
  const Point2 q = p - pose.center();
  return {c * q.x + s * q.y, -s * q.x + c * q.y};
}

inline Point2 apply_point(const Point2& q, const PoseParams& pose) {
  const double c = std::cos(pose.theta), s = std::sin(pose.theta);
  return {c * q.x - s * q.y + pose.cx, s * q.x + c * q.y + pose.cy};
}

inline ShapeVector normalize_pose(const LandmarkShape& shape, const PoseParams& pose) {
  LandmarkShape out;
  out.endo.reserve(shape.endo.size());
  out.epi.reserve(shape.epi.size());
  for (const Point2& p : shape.endo) out.endo.push_back(normalize_point(p, pose));
  for (const Point2& p : shape.epi) out.epi.push_back(normalize_point(p, pose));
  return to_shape_vector(out);
}

inline LandmarkShape apply_pose(const ShapeVector& s, const PoseParams& pose) {
  LandmarkShape norm = from_shape_vector(s);
  LandmarkShape out;
  out.endo.reserve(norm.endo.size());
  out.epi.reserve(norm.epi.size());
  for (const Point2& q : norm.endo) out.endo.push_back(apply_point(q, pose));
  for (const Point2& q : norm.epi) out.epi.push_back(apply_point(q, pose));
  return out;
}

struct StatShapeModel {
  ShapeVector mean;            // 4N
  Eigen::MatrixXd modes;       // 4N x R, orthonormal columns
  Eigen::VectorXd eigenvalues; // R, descending, sigma^2/(I-1)
  int n_landmarks = 0;
  int training_count = 0;

  int rank() const { return static_cast<int>(eigenvalues.size()); }
};

// PCA via SVD of the centered I x 4N shape matrix. Eigenvalues use the
// sample-variance convention sigma^2/(I-1) so that training coefficients
// have unit variance per mode. Modes below 1e-12 * lambda_1 are dropped.
inline StatShapeModel fit(const std::vector<ShapeVector>& shapes) {
  const int count = static_cast<int>(shapes.size());
  if (count < 2) throw std::invalid_argument("fit: need at least 2 shapes");
  const Eigen::Index dim = shapes[0].size();
  if (dim % 4 != 0) throw std::invalid_argument("fit: shape vectors must have length 4N");
  for (const auto& s : shapes) {
    if (s.size() != dim) throw std::invalid_argument("fit: inconsistent shape vector lengths");
  }

  StatShapeModel model;
  model.n_landmarks = static_cast<int>(dim / 4);
  model.training_count = count;
  model.mean = ShapeVector::Zero(dim);
  for (const auto& s : shapes) model.mean += s;
  model.mean /= static_cast<double>(count);

  Eigen::MatrixXd centered(count, dim);
  for (int i = 0; i < count; ++i) centered.row(i) = (shapes[i] - model.mean).transpose();

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
  const Eigen::VectorXd sigma = svd.singularValues();
  Eigen::MatrixXd v = svd.matrixV();

  // A leading singular value at rounding-noise level means the training set
  // has no variation at all.
  const double noise_floor = 1e-10 * (model.mean.norm() + 1.0);
  const double lam1 =
      (sigma.size() > 0 && sigma[0] > noise_floor) ? sigma[0] * sigma[0] / (count - 1) : 0.0;
  int rank = 0;
  for (Eigen::Index m = 0; m < sigma.size(); ++m) {
    const double lam = sigma[m] * sigma[m] / (count - 1);
    if (lam1 <= 0.0 || lam < 1e-12 * lam1) break;
    ++rank;
  }
  model.eigenvalues.resize(rank);
  model.modes.resize(dim, rank);
  for (int m = 0; m < rank; ++m) {
    model.eigenvalues[m] = sigma[m] * sigma[m] / (count - 1);
    Eigen::VectorXd mode = v.col(m);
    // Fix the SVD sign ambiguity: largest-magnitude entry positive.
    Eigen::Index imax = 0;
    mode.cwiseAbs().maxCoeff(&imax);
    if (mode[imax] < 0.0) mode = -mode;
    model.modes.col(m) = mode;
  }
  return model;
}

// b_m = v_m . (s - mean) / sqrt(lambda_m) for the first M modes.
inline ShapeCoefficients project(const ShapeVector& s, const StatShapeModel& model, int m_modes) {
  if (m_modes < 0 || m_modes > model.rank())
    throw std::invalid_argument("project: M exceeds retained modes");
  const Eigen::VectorXd centered = s - model.mean;
  ShapeCoefficients b(m_modes);
  for (int m = 0; m < m_modes; ++m)
    b[m] = model.modes.col(m).dot(centered) / std::sqrt(model.eigenvalues[m]);
  return b;
}

inline ShapeVector reconstruct(const ShapeCoefficients& b, const StatShapeModel& model,
                               int m_modes) {
  if (m_modes != b.size()) throw std::invalid_argument("reconstruct: M does not match b length");
  if (m_modes > model.rank()) throw std::invalid_argument("reconstruct: M exceeds retained modes");
  ShapeVector s = model.mean;
  for (int m = 0; m < m_modes; ++m)
    s += b[m] * std::sqrt(model.eigenvalues[m]) * model.modes.col(m);
  return s;
}

// Pose values normalized to [-1, 1]: theta/pi and the center offset from the
// grid center in units of the half grid extent.
inline std::array<double, 3> normalize_pose_params(const PoseParams& pose, const GridSpec& grid) {
  if (!grid.contains_mm(pose.center()))
    throw std::invalid_argument("normalize_pose_params: center outside grid");
  const Point2 c = grid.center_mm();
  return {pose.theta / M_PI, (pose.cx - c.x) / (0.5 * grid.extent_x_mm()),
          (pose.cy - c.y) / (0.5 * grid.extent_y_mm())};
}

inline PoseParams denormalize_pose_params(const std::array<double, 3>& v, const GridSpec& grid) {
  const Point2 c = grid.center_mm();
  return PoseParams(v[0] * M_PI, c.x + v[1] * 0.5 * grid.extent_x_mm(),
                    c.y + v[2] * 0.5 * grid.extent_y_mm());
}

// ---------------------------------------------------------------------------
// Serialization: versioned JSON, numeric values written with 17 significant
// digits so the round trip is lossless.

inline std::string to_json(const StatShapeModel& model) {
  std::string out;
  out.reserve(static_cast<std::size_t>(model.mean.size() * (model.rank() + 2)) * 20 + 256);
  auto append_vector = [&out](const auto& v) {
    out += '[';
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      if (i) out += ',';
      out += format_g17(v[i]);
    }
    out += ']';
  };
  out += "{\n\"version\": 1,\n\"N\": " + std::to_string(model.n_landmarks) +
         ",\n\"training_count\": " + std::to_string(model.training_count) + ",\n\"mean\": ";
  append_vector(model.mean);
  out += ",\n\"eigenvalues\": ";
  append_vector(model.eigenvalues);
  out += ",\n\"eigenvectors\": [";
  for (int m = 0; m < model.rank(); ++m) {
    if (m) out += ',';
    out += "\n";
    append_vector(model.modes.col(m));
  }
  out += "]\n}\n";
  return out;
}

inline void save_shape_model(const StatShapeModel& model, const std::filesystem::path& path) {
  write_file(path, to_json(model));
}

inline StatShapeModel load_shape_model(const std::filesystem::path& path) {
  const nlohmann::json j = nlohmann::json::parse(read_file(path));
  if (!j.contains("version") || j["version"].get<int>() != 1)
    throw ConfigError("shape model file: unsupported version");
  StatShapeModel model;
  model.n_landmarks = j["N"].get<int>();
  model.training_count = j["training_count"].get<int>();
  const auto& mean = j["mean"];
  model.mean.resize(static_cast<Eigen::Index>(mean.size()));
  for (Eigen::Index i = 0; i < model.mean.size(); ++i) model.mean[i] = mean[i].get<double>();
  const auto& ev = j["eigenvalues"];
  model.eigenvalues.resize(static_cast<Eigen::Index>(ev.size()));
  for (Eigen::Index i = 0; i < model.eigenvalues.size(); ++i)
    model.eigenvalues[i] = ev[i].get<double>();
  const auto& vecs = j["eigenvectors"];
  model.modes.resize(model.mean.size(), static_cast<Eigen::Index>(vecs.size()));
  for (Eigen::Index m = 0; m < model.modes.cols(); ++m) {
    const auto& col = vecs[static_cast<std::size_t>(m)];
    if (static_cast<Eigen::Index>(col.size()) != model.mean.size())
      throw ConfigError("shape model file: eigenvector length mismatch");
    for (Eigen::Index i = 0; i < model.mean.size(); ++i)
      model.modes(i, m) = col[static_cast<std::size_t>(i)].get<double>();
  }
  if (model.mean.size() != 4 * model.n_landmarks)
    throw ConfigError("shape model file: mean length mismatch");
  return model;
}

}  // namespace shapeseg
