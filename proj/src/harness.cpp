#include "mvg/harness.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "mvg/parallel.hpp"
#include "mvg/spatial_index.hpp"

namespace mvg::harness {

Surface Surface::plane(const Vec3& point, const Vec3& normal) {
  if (!(normal.norm() > 0.0)) throw DomainError("plane: zero normal");
  Surface s;
  s.shape = Shape::Plane;
  s.point = point;
  s.normal = normal.normalized();
  return s;
}

Surface Surface::sphere(const Vec3& centre, double radius) {
  if (!(radius > 0.0)) throw DomainError("sphere: radius must be positive");
  Surface s;
  s.shape = Shape::Sphere;
  s.point = centre;
  s.radius = radius;
  return s;
}

double Surface::sdf(const Vec3& p) const {
  return shape == Shape::Plane ? normal.dot(p - point) : (p - point).norm() - radius;
}

Vec3 Surface::normal_at(const Vec3& p) const {
  return shape == Shape::Plane ? normal : (p - point).normalized();
}

std::optional<double> Surface::intersect(const Vec3& origin, const Vec3& dir) const {
  if (shape == Shape::Plane) {
    const double denom = normal.dot(dir);
    if (std::abs(denom) < 1e-15) return std::nullopt;
    const double t = normal.dot(point - origin) / denom;
    if (!(t > 0.0)) return std::nullopt;
    return t;
  }
  const Vec3 oc = origin - point;
  const double a = dir.squaredNorm();
  const double b = 2.0 * dir.dot(oc);
  const double c = oc.squaredNorm() - radius * radius;
  const double disc = b * b - 4.0 * a * c;
  if (disc < 0.0) return std::nullopt;
  // Stable roots: q / a and c / q.
  const double q = -0.5 * (b + std::copysign(std::sqrt(disc), b));
  double t0 = q / a, t1 = q != 0.0 ? c / q : t0;
  if (t0 > t1) std::swap(t0, t1);
  if (t0 > 0.0) return t0;
  if (t1 > 0.0) return t1;
  return std::nullopt;
}

std::vector<CameraPose> make_rig(const RigSpec& rig) {
  if (rig.views < 1) throw ConfigError("rig: need at least one view");
  if (!(rig.orbit_radius > 0.0)) throw ConfigError("rig: orbit radius must be positive");
  const Vec3 axis = rig.axis.normalized();
  int least = 0;
  for (int i = 1; i < 3; ++i)
    if (std::abs(axis[i]) < std::abs(axis[least])) least = i;
  const Vec3 e1 = axis.cross(Vec3::Unit(least)).normalized();
  const Vec3 e2 = axis.cross(e1);

  std::vector<Vec3> dirs;
  if (rig.layout == RigLayout::Cap) {
    dirs.push_back(axis);
    const int ring = rig.views - 1;
    for (int k = 0; k < ring; ++k) {
      const double phi = 2.0 * std::numbers::pi * k / ring;
      dirs.push_back(std::cos(rig.cone_angle) * axis +
                     std::sin(rig.cone_angle) * (std::cos(phi) * e1 + std::sin(phi) * e2));
    }
  } else {
    if (rig.views > 6) throw ConfigError("rig: the surround layout has at most six views");
    const Vec3 all[6] = {axis, -axis, e1, -e1, e2, -e2};
    dirs.assign(all, all + rig.views);
  }

  std::vector<CameraPose> poses;
  for (const Vec3& d : dirs) {
    const Vec3 eye = rig.target + rig.orbit_radius * d;
    const Vec3 hint = std::abs(d.y()) > 0.9 ? Vec3(0, 0, 1) : Vec3(0, 1, 0);
    poses.push_back(CameraPose::look_at(eye, rig.target, hint));
  }
  return poses;
}

Vec3 shade(const Surface& s, const Vec3& p, const Vec3& normal) {
  static const Vec3 light = Vec3(-0.4, -0.6, -1.0).normalized();  // towards the light
  const double scale = s.shape == Shape::Sphere ? s.radius : 1.0;
  const double pattern = std::sin(2.0 * std::numbers::pi * p.x() / (0.5 * scale)) *
                         std::sin(2.0 * std::numbers::pi * p.y() / (0.5 * scale));
  const Vec3 albedo = Vec3(0.8, 0.7, 0.6) * (1.0 + 0.15 * pattern);
  const double lambert = 0.2 + 0.8 * std::max(0.0, normal.dot(light));
  return (albedo * lambert).cwiseMin(1.0).cwiseMax(0.0);
}

void add_depth_noise(DepthMap& d, double sigma, NoiseKind kind, std::uint64_t seed) {
  if (sigma < 0.0) throw DomainError("add_depth_noise: negative noise level");
  if (sigma == 0.0) return;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, sigma);
  std::uniform_real_distribution<double> uniform(-sigma, sigma);
  for (std::size_t i = 0; i < d.values.size(); ++i) {
    if (!d.valid.data[i]) continue;
    const double e = kind == NoiseKind::Gaussian ? gauss(rng) : uniform(rng);
    d.values.data[i] *= 1.0 + e;
    if (!(d.values.data[i] > 0.0)) {
      d.values.data[i] = 0.0;
      d.valid.data[i] = 0;
    }
  }
}

SyntheticScene make_scene(const SceneSpec& spec) {
  if (spec.noise < 0.0) throw ConfigError("scene: noise must be >= 0");
  if (spec.rig.width < 1 || spec.rig.height < 1) throw ConfigError("scene: image size must be >= 1");
  const Surface& surf = spec.surface;
  const CameraIntrinsics k = intrinsics_from_fov(spec.rig.fov, spec.rig.fov, spec.rig.width, spec.rig.height);
  const std::vector<CameraPose> poses = make_rig(spec.rig);

  SyntheticScene scene;
  scene.spec = spec;
  for (std::size_t id = 0; id < poses.size(); ++id) {
    const CameraPose& pose = poses[id];
    const Vec3 eye = pose.center();
    if (surf.shape == Shape::Sphere && (eye - surf.point).norm() <= surf.radius)
      throw ConfigError("scene: camera " + std::to_string(id) + " lies inside the sphere");
    View v;
    v.id = static_cast<int>(id);
    v.intrinsics = k;
    v.pose = pose;
    v.image = ImageBuffer(k.width, k.height);
    v.depth = DepthMap(k.width, k.height);
    NormalMap normals(k.width, k.height);
    const Mat3 rt = pose.rotation.transpose();
    parallel_for(static_cast<std::size_t>(k.height), [&](std::size_t row) {
      const int y = static_cast<int>(row);
      for (int x = 0; x < k.width; ++x) {
        const Vec3 dir = rt * Vec3((x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0);
        const auto t = surf.intersect(eye, dir);
        if (!t) continue;
        const Vec3 p = eye + *t * dir;
        Vec3 n = surf.normal_at(p);
        if (n.dot(eye - p) < 0.0) n = -n;
        v.depth.set(x, y, *t);
        normals.set(x, y, pose.rotation * n);
        v.image.set(x, y, shade(surf, p, n));
      }
    });
    if (v.depth.valid_count() == 0)
      throw ConfigError("scene: camera " + std::to_string(id) + " does not see the surface");
    scene.gt_depth.push_back(v.depth);
    add_depth_noise(v.depth, spec.noise, spec.noise_kind,
                    spec.seed + 0x9E3779B97F4A7C15ULL * (id + 1));
    scene.gt_normals.push_back(std::move(normals));
    scene.views.push_back(std::move(v));
  }
  return scene;
}

}  // namespace mvg::harness

namespace mvg::harness {

AngularStats angular_error(const NormalMap& est, const NormalMap& gt, const Mask* region) {
  if (est.width() != gt.width() || est.height() != gt.height())
    throw DomainError("angular_error: maps differ in size");
  std::vector<double> angles;
  for (std::size_t i = 0; i < est.values.size(); ++i) {
    if (!est.valid.data[i] || !gt.valid.data[i]) continue;
    if (region && !region->data[i]) continue;
    const double c = std::clamp(est.values.data[i].dot(gt.values.data[i]), -1.0, 1.0);
    angles.push_back(std::acos(c) * 180.0 / std::numbers::pi);
  }
  AngularStats s;
  s.count = angles.size();
  if (angles.empty()) return s;
  double sum = 0.0;
  for (double a : angles) sum += a;
  s.mean_deg = sum / static_cast<double>(angles.size());
  std::sort(angles.begin(), angles.end());
  const std::size_t m = angles.size();
  s.median_deg = m % 2 ? angles[m / 2] : 0.5 * (angles[m / 2 - 1] + angles[m / 2]);
  return s;
}

double depth_rms(const DepthMap& a, const DepthMap& b, const Mask* region) {
  if (a.width() != b.width() || a.height() != b.height())
    throw DomainError("depth_rms: maps differ in size");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    if (!a.valid.data[i] || !b.valid.data[i]) continue;
    if (region && !region->data[i]) continue;
    const double e = a.values.data[i] - b.values.data[i];
    sum += e * e;
    ++n;
  }
  return n ? std::sqrt(sum / static_cast<double>(n)) : 0.0;
}

Mask interior_mask(int width, int height, int margin) {
  Mask m(width, height, 0);
  for (int y = margin; y < height - margin; ++y)
    for (int x = margin; x < width - margin; ++x) m(x, y) = 1;
  return m;
}

double point_triangle_distance(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  // Closest point by Voronoi-region classification.
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) return (p - a).norm();
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return (p - b).norm();
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) return (p - (a + d1 / (d1 - d3) * ab)).norm();
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return (p - c).norm();
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) return (p - (a + d2 / (d2 - d6) * ac)).norm();
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0)
    return (p - (b + (d4 - d3) / ((d4 - d3) + (d5 - d6)) * (c - b))).norm();
  const double denom = 1.0 / (va + vb + vc);
  return (p - (a + ab * (vb * denom) + ac * (vc * denom))).norm();
}

struct MeshDistance::Impl {
  struct Node {
    Vec3 lo, hi;
    std::uint32_t begin = 0, end = 0;  // triangle range for leaves
    std::int32_t left = -1, right = -1;
  };
  const TriangleMesh* mesh = nullptr;
  std::vector<std::uint32_t> order;  // triangle ids, leaves own contiguous runs
  std::vector<Node> nodes;

  std::int32_t build(std::vector<Vec3>& centroids, std::uint32_t begin, std::uint32_t end) {
    Node node;
    node.lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    node.hi = -node.lo;
    for (std::uint32_t i = begin; i < end; ++i)
      for (auto v : mesh->triangles[order[i]]) {
        node.lo = node.lo.cwiseMin(mesh->vertices[v]);
        node.hi = node.hi.cwiseMax(mesh->vertices[v]);
      }
    node.begin = begin;
    node.end = end;
    const auto id = static_cast<std::int32_t>(nodes.size());
    nodes.push_back(node);
    if (end - begin <= 8) return id;
    int axis = 0;
    (node.hi - node.lo).maxCoeff(&axis);
    const std::uint32_t mid = begin + (end - begin) / 2;
    std::nth_element(order.begin() + begin, order.begin() + mid, order.begin() + end,
                     [&](std::uint32_t x, std::uint32_t y) {
                       return centroids[x][axis] < centroids[y][axis] ||
                              (centroids[x][axis] == centroids[y][axis] && x < y);
                     });
    const std::int32_t l = build(centroids, begin, mid);
    const std::int32_t r = build(centroids, mid, end);
    nodes[id].left = l;
    nodes[id].right = r;
    return id;
  }

  static double box_distance(const Node& n, const Vec3& p) {
    return (p.cwiseMax(n.lo).cwiseMin(n.hi) - p).norm();
  }
};

MeshDistance::MeshDistance(const TriangleMesh& mesh) : impl_(std::make_shared<Impl>()) {
  if (mesh.triangles.empty()) throw DomainError("MeshDistance: empty mesh");
  impl_->mesh = &mesh;
  std::vector<Vec3> c(mesh.triangles.size());
  for (std::size_t t = 0; t < c.size(); ++t) {
    const auto& tri = mesh.triangles[t];
    c[t] = (mesh.vertices[tri[0]] + mesh.vertices[tri[1]] + mesh.vertices[tri[2]]) / 3.0;
  }
  impl_->order.resize(c.size());
  for (std::size_t t = 0; t < c.size(); ++t) impl_->order[t] = static_cast<std::uint32_t>(t);
  impl_->build(c, 0, static_cast<std::uint32_t>(c.size()));
}

double MeshDistance::operator()(const Vec3& p) const {
  const Impl& im = *impl_;
  const TriangleMesh& m = *im.mesh;
  double best = std::numeric_limits<double>::infinity();
  std::vector<std::int32_t> stack{0};
  while (!stack.empty()) {
    const auto& node = im.nodes[stack.back()];
    stack.pop_back();
    if (Impl::box_distance(node, p) >= best) continue;
    if (node.left < 0) {
      for (std::uint32_t i = node.begin; i < node.end; ++i) {
        const auto& tri = m.triangles[im.order[i]];
        best = std::min(best, point_triangle_distance(p, m.vertices[tri[0]], m.vertices[tri[1]],
                                                      m.vertices[tri[2]]));
      }
      continue;
    }
    // Visit the nearer child first.
    const double dl = Impl::box_distance(im.nodes[node.left], p);
    const double dr = Impl::box_distance(im.nodes[node.right], p);
    if (dl < dr) {
      stack.push_back(node.right);
      stack.push_back(node.left);
    } else {
      stack.push_back(node.left);
      stack.push_back(node.right);
    }
  }
  return best;
}

std::vector<Vec3> sample_mesh(const TriangleMesh& mesh, std::size_t samples, std::uint64_t seed) {
  if (mesh.triangles.empty()) throw DomainError("sample_mesh: empty mesh");
  std::vector<double> cumulative(mesh.triangles.size());
  double total = 0.0;
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    total += triangle_area(mesh, t);
    cumulative[t] = total;
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::vector<Vec3> out(samples);
  for (auto& p : out) {
    const double r = u01(rng) * total;
    const std::size_t t = std::min<std::size_t>(
        cumulative.size() - 1,
        static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), r) - cumulative.begin()));
    double a = u01(rng), b = u01(rng);
    if (a + b > 1.0) {
      a = 1.0 - a;
      b = 1.0 - b;
    }
    const auto& tri = mesh.triangles[t];
    const Vec3& v0 = mesh.vertices[tri[0]];
    p = v0 + a * (mesh.vertices[tri[1]] - v0) + b * (mesh.vertices[tri[2]] - v0);
  }
  return out;
}

std::vector<Vec3> sample_surface(const Surface& s, std::size_t samples, std::uint64_t seed,
                                 const TriangleMesh* extent) {
  std::mt19937_64 rng(seed);
  std::vector<Vec3> out(samples);
  if (s.shape == Shape::Sphere) {
    std::normal_distribution<double> g(0.0, 1.0);
    for (auto& p : out) {
      Vec3 d(g(rng), g(rng), g(rng));
      while (d.norm() < 1e-12) d = Vec3(g(rng), g(rng), g(rng));
      p = s.point + s.radius * d.normalized();
    }
    return out;
  }
  if (!extent || extent->vertices.empty())
    throw DomainError("sample_surface: a plane needs a mesh extent");
  int least = 0;
  for (int i = 1; i < 3; ++i)
    if (std::abs(s.normal[i]) < std::abs(s.normal[least])) least = i;
  const Vec3 e1 = s.normal.cross(Vec3::Unit(least)).normalized();
  const Vec3 e2 = s.normal.cross(e1);
  double lo1 = 1e300, hi1 = -1e300, lo2 = 1e300, hi2 = -1e300;
  for (const Vec3& v : extent->vertices) {
    const double a = e1.dot(v - s.point), b = e2.dot(v - s.point);
    lo1 = std::min(lo1, a), hi1 = std::max(hi1, a);
    lo2 = std::min(lo2, b), hi2 = std::max(hi2, b);
  }
  std::uniform_real_distribution<double> u1(lo1, hi1), u2(lo2, hi2);
  for (auto& p : out) {
    const double a = u1(rng), b = u2(rng);
    p = s.point + a * e1 + b * e2;
  }
  return out;
}

ChamferParts chamfer_parts(const TriangleMesh& mesh, const Surface& s, std::size_t samples,
                           std::uint64_t seed) {
  if (mesh.triangles.empty()) throw DomainError("chamfer_distance: empty mesh");
  if (samples == 0) throw DomainError("chamfer_distance: need at least one sample");
  ChamferParts out;
  const std::vector<Vec3> on_mesh = sample_mesh(mesh, samples, seed);
  for (const Vec3& p : on_mesh) out.mesh_to_surface += std::abs(s.sdf(p));
  out.mesh_to_surface /= static_cast<double>(samples);

  const std::vector<Vec3> on_surface = sample_surface(s, samples, seed + 1, &mesh);
  const MeshDistance dist(mesh);
  std::vector<double> d(samples);
  parallel_for(samples, [&](std::size_t i) { d[i] = dist(on_surface[i]); });
  for (double v : d) out.surface_to_mesh += v;
  out.surface_to_mesh /= static_cast<double>(samples);
  return out;
}

double chamfer_distance(const TriangleMesh& mesh, const Surface& s, std::size_t samples,
                        std::uint64_t seed) {
  const ChamferParts p = chamfer_parts(mesh, s, samples, seed);
  return 0.5 * (p.mesh_to_surface + p.surface_to_mesh);
}

double planarity_rms(const TriangleMesh& mesh, const Surface& plane) {
  if (plane.shape != Shape::Plane) throw DomainError("planarity_rms: surface is not a plane");
  if (mesh.vertices.empty()) throw DomainError("planarity_rms: empty mesh");
  double sum = 0.0;
  for (const Vec3& v : mesh.vertices) sum += plane.sdf(v) * plane.sdf(v);
  return std::sqrt(sum / static_cast<double>(mesh.vertices.size()));
}

}  // namespace mvg::harness
