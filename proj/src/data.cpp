#include "epic/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include <Eigen/Geometry>

#include "epic/error.hpp"

namespace epic {

namespace fs = std::filesystem;

namespace {

constexpr double kPi = std::numbers::pi;

Point3 random_unit_vector(Rng& rng) {
  for (;;) {
    Point3 v(rng.normal(0, 1), rng.normal(0, 1), rng.normal(0, 1));
    const double n = v.norm();
    if (n > 1e-12) return v / n;
  }
}

// Uniform point on triangle (a, b, c).
Point3 on_triangle(const Point3& a, const Point3& b, const Point3& c, Rng& rng) {
  const double r1 = std::sqrt(rng.uniform(0, 1));
  const double r2 = rng.uniform(0, 1);
  return (1 - r1) * a + r1 * (1 - r2) * b + r1 * r2 * c;
}

// Picks an index with probability proportional to weights[i].
std::size_t pick_weighted(std::span<const double> weights, Rng& rng) {
  double total = 0;
  for (double w : weights) total += w;
  double u = rng.uniform(0, total);
  for (std::size_t i = 0; i + 1 < weights.size(); ++i) {
    if (u < weights[i]) return i;
    u -= weights[i];
  }
  return weights.size() - 1;
}

Point3 ellipsoid_point(const Point3& radii, Rng& rng) {
  return random_unit_vector(rng).cwiseProduct(radii);
}

Point3 box_point(const Point3& half, Rng& rng) {
  // Face pairs normal to x, y, z.
  const std::array<double, 3> area = {half.y() * half.z(), half.x() * half.z(),
                                      half.x() * half.y()};
  const std::size_t axis = pick_weighted(area, rng);
  Point3 p(rng.uniform(-half.x(), half.x()), rng.uniform(-half.y(), half.y()),
           rng.uniform(-half.z(), half.z()));
  const auto a = static_cast<Eigen::Index>(axis);
  p(a) = rng.uniform(0, 1) < 0.5 ? -half(a) : half(a);
  return p;
}

Point3 cylinder_point(double radius, double height, Rng& rng) {
  const std::array<double, 3> area = {2 * kPi * radius * height, kPi * radius * radius,
                                      kPi * radius * radius};
  const std::size_t part = pick_weighted(area, rng);
  const double phi = rng.uniform(0, 2 * kPi);
  if (part == 0) {
    return {radius * std::cos(phi), radius * std::sin(phi), rng.uniform(-height / 2, height / 2)};
  }
  const double r = radius * std::sqrt(rng.uniform(0, 1));
  return {r * std::cos(phi), r * std::sin(phi), part == 1 ? -height / 2 : height / 2};
}

Point3 cone_point(double radius, double height, Rng& rng) {
  const double slant = std::hypot(radius, height);
  const std::array<double, 2> area = {kPi * radius * slant, kPi * radius * radius};
  const double phi = rng.uniform(0, 2 * kPi);
  const double t = std::sqrt(rng.uniform(0, 1));
  if (pick_weighted(area, rng) == 0) {
    // t = distance fraction from the apex.
    return {t * radius * std::cos(phi), t * radius * std::sin(phi), height * (1 - t)};
  }
  return {t * radius * std::cos(phi), t * radius * std::sin(phi), 0.0};
}

Point3 torus_point(double major, double minor, Rng& rng) {
  for (;;) {
    const double u = rng.uniform(0, 2 * kPi);
    const double v = rng.uniform(0, 2 * kPi);
    if (rng.uniform(0, major + minor) <= major + minor * std::cos(v)) {
      const double ring = major + minor * std::cos(v);
      return {ring * std::cos(u), ring * std::sin(u), minor * std::sin(v)};
    }
  }
}

std::vector<Point3> shape_points(int label, int n, Rng& rng) {
  std::vector<Point3> pts;
  pts.reserve(static_cast<std::size_t>(n));
  switch (label) {
    case 0: {  // sphere
      const Point3 radii(1.0, rng.uniform(0.9, 1.1), rng.uniform(0.9, 1.1));
      for (int i = 0; i < n; ++i) pts.push_back(ellipsoid_point(radii, rng));
      break;
    }
    case 1: {  // cube
      const Point3 half(1.0, rng.uniform(0.8, 1.2), rng.uniform(0.8, 1.2));
      for (int i = 0; i < n; ++i) pts.push_back(box_point(half, rng));
      break;
    }
    case 2: {  // cylinder, aspect = height / diameter
      const double aspect = rng.uniform(0.5, 2.0);
      for (int i = 0; i < n; ++i) pts.push_back(cylinder_point(1.0, 2.0 * aspect, rng));
      break;
    }
    case 3: {  // cone
      const double height = rng.uniform(1.0, 2.5);
      for (int i = 0; i < n; ++i) pts.push_back(cone_point(1.0, height, rng));
      break;
    }
    case 4: {  // torus
      const double ratio = rng.uniform(0.2, 0.5);
      for (int i = 0; i < n; ++i) pts.push_back(torus_point(1.0, ratio, rng));
      break;
    }
    case 5: {  // tetrahedron with perturbed vertices
      std::array<Point3, 4> v = {Point3(1, 1, 1), Point3(1, -1, -1), Point3(-1, 1, -1),
                                 Point3(-1, -1, 1)};
      for (auto& p : v) p += Point3(rng.normal(0, 0.1), rng.normal(0, 0.1), rng.normal(0, 0.1));
      const std::array<std::array<int, 3>, 4> faces = {
          {{0, 1, 2}, {0, 1, 3}, {0, 2, 3}, {1, 2, 3}}};
      std::array<double, 4> area{};
      for (std::size_t f = 0; f < 4; ++f) {
        const auto& [a, b, c] = faces[f];
        area[f] = 0.5 * (v[b] - v[a]).cross(v[c] - v[a]).norm();
      }
      for (int i = 0; i < n; ++i) {
        const auto& [a, b, c] = faces[pick_weighted(area, rng)];
        pts.push_back(on_triangle(v[a], v[b], v[c], rng));
      }
      break;
    }
    case 6: {  // disc: a very flat cylinder
      const double thickness = rng.uniform(0.04, 0.16);
      for (int i = 0; i < n; ++i) pts.push_back(cylinder_point(1.0, thickness, rng));
      break;
    }
    case 7: {  // helix with a thin noisy tube
      const double turns = rng.uniform(2.0, 4.0);
      const double height = rng.uniform(1.5, 3.0);
      for (int i = 0; i < n; ++i) {
        const double t = rng.uniform(0, 1);
        const double a = 2 * kPi * turns * t;
        pts.emplace_back(std::cos(a) + rng.normal(0, 0.03), std::sin(a) + rng.normal(0, 0.03),
                         height * (t - 0.5) + rng.normal(0, 0.03));
      }
      break;
    }
    default:
      throw Error(ErrorKind::BadConfig, "unknown shape label " + std::to_string(label));
  }
  return pts;
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[offset + i]) << (8 * i);
  return v;
}

}  // namespace

void DatasetConfig::validate() const {
  if (train_size < num_classes() || test_size < num_classes()) {
    throw Error(ErrorKind::BadConfig, "train_size and test_size must be >= " +
                                          std::to_string(num_classes()));
  }
  if (points_per_cloud < 64) {
    throw Error(ErrorKind::BadConfig, "points_per_cloud must be >= 64");
  }
}

PointCloud quantize_to_float(const PointCloud& cloud) {
  PointMatrix m = cloud.matrix().cast<float>().cast<double>();
  return PointCloud(std::move(m));
}

PointCloud generate_shape(int label, int n_points, Rng& rng) {
  const std::vector<Point3> raw = shape_points(label, n_points, rng);
  const Point3 axis = random_unit_vector(rng);
  const double angle = rng.uniform(0, 10.0) * kPi / 180.0;
  const Eigen::Matrix3d rot = Eigen::AngleAxisd(angle, axis).toRotationMatrix();
  std::vector<Point3> posed;
  posed.reserve(raw.size());
  for (const auto& p : raw) posed.push_back(rot * p);
  return quantize_to_float(normalize_unit_sphere(PointCloud(posed)));
}

Dataset generate_dataset(const DatasetConfig& config) {
  config.validate();
  const Rng root(config.seed);
  auto make_split = [&](std::string_view name, int count) {
    const Rng split_rng = root.split(name);
    std::vector<LabeledCloud> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
      Rng rng = split_rng.split(static_cast<std::uint64_t>(i));
      const int label = i % DatasetConfig::num_classes();
      char id[32];
      std::snprintf(id, sizeof id, "%s_%05d", std::string(name).c_str(), i);
      out.push_back({generate_shape(label, config.points_per_cloud, rng), label, id});
    }
    return out;
  };
  return Dataset{make_split("train", config.train_size), make_split("test", config.test_size)};
}

PointCloud augment(const PointCloud& cloud, Rng& rng) {
  Eigen::RowVector3d scale, shift;
  for (int a = 0; a < 3; ++a) scale(a) = rng.uniform(2.0 / 3.0, 3.0 / 2.0);
  for (int a = 0; a < 3; ++a) shift(a) = rng.uniform(-0.2, 0.2);
  PointMatrix m = (cloud.matrix().array().rowwise() * scale.array()).rowwise() + shift.array();
  return PointCloud(std::move(m));
}

std::vector<std::uint8_t> encode_cloud(const PointCloud& cloud) {
  std::vector<std::uint8_t> out = {'E', 'P', 'C', 'D'};
  put_u32(out, kCloudFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(cloud.size()));
  out.reserve(out.size() + static_cast<std::size_t>(cloud.size()) * 12);
  for (int i = 0; i < cloud.size(); ++i) {
    for (int a = 0; a < 3; ++a) {
      put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(cloud.matrix()(i, a))));
    }
  }
  return out;
}

PointCloud decode_cloud(std::span<const std::uint8_t> bytes) {
  auto fail = [](std::size_t offset, const std::string& what) {
    throw Error(ErrorKind::FormatError, what + " at byte offset " + std::to_string(offset));
  };
  if (bytes.size() < 12) fail(bytes.size(), "truncated header");
  if (std::memcmp(bytes.data(), "EPCD", 4) != 0) {
    std::string magic;
    for (int i = 0; i < 4; ++i) {
      const char c = static_cast<char>(bytes[static_cast<std::size_t>(i)]);
      magic += std::isprint(static_cast<unsigned char>(c)) ? c : '?';
    }
    fail(0, "unknown magic '" + magic + "'");
  }
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kCloudFormatVersion) fail(4, "unsupported version " + std::to_string(version));
  const std::uint32_t count = get_u32(bytes, 8);
  if (count == 0) fail(8, "empty cloud");
  const std::size_t expected = 12 + static_cast<std::size_t>(count) * 12;
  if (bytes.size() < expected) fail(bytes.size(), "truncated point data (expected " +
                                                      std::to_string(expected) + " bytes)");
  if (bytes.size() > expected) fail(expected, "trailing bytes");
  PointMatrix m(count, 3);
  std::size_t offset = 12;
  for (std::uint32_t i = 0; i < count; ++i) {
    for (int a = 0; a < 3; ++a) {
      const float f = std::bit_cast<float>(get_u32(bytes, offset));
      if (!std::isfinite(f)) fail(offset, "non-finite coordinate");
      m(i, a) = f;
      offset += 4;
    }
  }
  return PointCloud(std::move(m));
}

void write_file_atomic(const fs::path& path, std::string_view contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::IoError, "cannot open " + tmp.string() + " for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw Error(ErrorKind::IoError, "failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void save_dataset(const fs::path& dir, const std::vector<LabeledCloud>& samples) {
  fs::create_directories(dir);
  std::string labels = "sample_id,label\n";
  for (const auto& s : samples) {
    const auto bytes = encode_cloud(s.cloud);
    write_file_atomic(dir / (s.sample_id + ".epcd"),
                      std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
    labels += s.sample_id + "," + std::to_string(s.label) + "\n";
  }
  write_file_atomic(dir / "labels.csv", labels);
}

std::vector<LabeledCloud> load_dataset(const fs::path& dir, bool normalize) {
  const fs::path labels_path = dir / "labels.csv";
  std::istringstream labels(read_file(labels_path));
  std::string line;
  if (!std::getline(labels, line) || line.rfind("sample_id,label", 0) != 0) {
    throw Error(ErrorKind::FormatError, labels_path.string() + ": missing header line");
  }
  std::vector<LabeledCloud> out;
  int line_no = 1;
  while (std::getline(labels, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.rfind(',');
    if (comma == std::string::npos || comma == 0) {
      throw Error(ErrorKind::FormatError,
                  labels_path.string() + ":" + std::to_string(line_no) + ": expected id,label");
    }
    const std::string id = line.substr(0, comma);
    int label = 0;
    try {
      std::size_t used = 0;
      label = std::stoi(line.substr(comma + 1), &used);
      if (used != line.size() - comma - 1 || label < 0) throw std::invalid_argument("label");
    } catch (const std::exception&) {
      throw Error(ErrorKind::FormatError,
                  labels_path.string() + ":" + std::to_string(line_no) + ": bad label");
    }
    const fs::path cloud_path = dir / (id + ".epcd");
    const std::string raw = read_file(cloud_path);
    PointCloud cloud = [&] {
      try {
        return decode_cloud(std::span(reinterpret_cast<const std::uint8_t*>(raw.data()),
                                      raw.size()));
      } catch (const Error& e) {
        throw Error(e.kind(), cloud_path.string() + ": " + e.what());
      }
    }();
    if (normalize) cloud = normalize_unit_sphere(cloud);
    out.push_back({std::move(cloud), label, id});
  }
  if (out.empty()) throw Error(ErrorKind::FormatError, labels_path.string() + ": no samples");
  return out;
}

}  // namespace epic
