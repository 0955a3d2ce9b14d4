#include "mvg/meshing.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <unordered_map>

#include "mvg/densify.hpp"
#include "mvg/parallel.hpp"
#include "mvg/spatial_index.hpp"

namespace mvg::meshing {

void MeshConfig::validate() const {
  if (!(voxel_min > 0.0) || !(voxel_min <= base_voxel) || !(base_voxel <= voxel_max))
    throw ConfigError("mesh: need 0 < voxel_min <= base_voxel <= voxel_max");
  if (smooth_steps < 0) throw ConfigError("mesh: smooth_steps must be >= 0");
  if (floater_knn < 1) throw ConfigError("mesh: floater_knn must be >= 1");
  if (!(floater_sigma > 0.0)) throw ConfigError("mesh: floater_sigma must be positive");
  if (!(iso > 0.0 && iso < 1.0)) throw ConfigError("mesh: iso must lie in (0, 1)");
  if (!(normal_blend >= 0.0 && normal_blend <= 1.0) || !(relax_lambda >= 0.0 && relax_lambda <= 1.0))
    throw ConfigError("mesh: normal_blend and relax_lambda must lie in [0, 1]");
  if (smooth_knn < 3) throw ConfigError("mesh: smooth_knn must be >= 3");
  if (laplacian_iterations < 0) throw ConfigError("mesh: laplacian_iterations must be >= 0");
  if ((bbox.lo.array() > bbox.hi.array()).any()) throw ConfigError("mesh: bbox lo exceeds hi");
}

SurfelCloud crop(const SurfelCloud& cloud, const BBox& box) {
  SurfelCloud out;
  for (const Surfel& s : cloud)
    if (box.contains(s.position)) out.push_back(s);
  return out;
}

SurfelCloud remove_floaters(const SurfelCloud& cloud, int k, double sigma) {
  if (cloud.size() < 2) return cloud;
  const std::size_t kk = std::min<std::size_t>(k, cloud.size() - 1);
  std::vector<Vec3> pts(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) pts[i] = cloud[i].position;
  const std::vector<double> d = mean_knn_distance(pts, kk);
  double mean = 0.0;
  for (double v : d) mean += v;
  mean /= static_cast<double>(d.size());
  double var = 0.0;
  for (double v : d) var += (v - mean) * (v - mean);
  const double limit = mean + sigma * std::sqrt(var / static_cast<double>(d.size()));
  SurfelCloud out;
  for (std::size_t i = 0; i < cloud.size(); ++i)
    if (d[i] <= limit) out.push_back(cloud[i]);
  return out;
}

SurfelCloud crop_and_filter(const SurfelCloud& cloud, const MeshConfig& cfg) {
  cfg.validate();
  if (cloud.empty()) throw EmptyCloudError("crop_and_filter: empty input cloud");
  SurfelCloud out = remove_floaters(crop(cloud, cfg.bbox), cfg.floater_knn, cfg.floater_sigma);
  if (out.empty()) throw EmptyCloudError("crop_and_filter: no points left after crop and filtering");
  return out;
}

SurfelCloud multiview_normal_smooth(const SurfelCloud& cloud, const std::vector<View>& views,
                                    const std::vector<NormalMap>& normal_maps,
                                    const MeshConfig& cfg, SmoothStats* stats) {
  if (normal_maps.size() != views.size())
    throw DomainError("multiview_normal_smooth: one normal map per view required");
  SurfelCloud out = cloud;
  const std::size_t n = out.size();
  std::vector<std::uint8_t> seen(n, 0);
  const std::size_t k = std::min<std::size_t>(cfg.smooth_knn, n > 0 ? n - 1 : 0);

  for (int step = 0; step < cfg.smooth_steps && k >= 2; ++step) {
    std::vector<Vec3> pts(n);
    for (std::size_t i = 0; i < n; ++i) pts[i] = out[i].position;
    const KdTree tree(pts);
    std::vector<std::vector<std::size_t>> neighbours(n);
    parallel_for(n, [&](std::size_t i) {
      for (const auto& nb : tree.knn(pts[i], k, i)) neighbours[i].push_back(nb.index);
    });

    for (std::size_t v = 0; v < views.size(); ++v) {
      const View& view = views[v];
      const NormalMap& nm = normal_maps[v];
      const Mat3 rt = view.pose.rotation.transpose();
      std::vector<Vec3> next_pos(n), next_normal(n);
      std::vector<std::uint8_t> visible(n, 0);
      parallel_for(n, [&](std::size_t i) {
        next_pos[i] = out[i].position;
        next_normal[i] = out[i].normal;
        const auto p = project(out[i].position, view.intrinsics, view.pose);
        if (!p) return;
        const int x = static_cast<int>(std::lround(p->u)), y = static_cast<int>(std::lround(p->v));
        if (!nm.values.contains(x, y) || !nm.is_valid(x, y) || !view.depth.is_valid(x, y)) return;
        if (std::abs(p->depth - view.depth(x, y)) > 0.01 * view.depth(x, y)) return;
        visible[i] = 1;
        Vec3 m = rt * nm(x, y);
        if (m.dot(out[i].normal) < 0.0) m = -m;
        const Vec3 normal =
            ((1.0 - cfg.normal_blend) * out[i].normal + cfg.normal_blend * m).normalized();
        Vec3 centroid = Vec3::Zero();
        for (std::size_t j : neighbours[i]) centroid += out[j].position;
        centroid /= static_cast<double>(neighbours[i].size());
        const double offset = normal.dot(out[i].position - centroid);
        next_pos[i] = out[i].position - cfg.relax_lambda * offset * normal;
        next_normal[i] = normal;
      });
      for (std::size_t i = 0; i < n; ++i) {
        if (!visible[i]) continue;
        seen[i] = 1;
        out[i].position = next_pos[i];
        if (!(out[i].normal - next_normal[i]).isZero(0.0)) {
          out[i].normal = next_normal[i];
          out[i].rotation = densify::rotation_from_normal(next_normal[i]);
        }
      }
    }
  }
  if (stats) {
    stats->invisible = 0;
    if (cfg.smooth_steps > 0 && k >= 2)
      for (auto s : seen) stats->invisible += s ? 0 : 1;
  }
  return out;
}

BlockKey block_of(const Vec3& p, double block_size) {
  return {static_cast<int>(std::floor(p.x() / block_size)),
          static_cast<int>(std::floor(p.y() / block_size)),
          static_cast<int>(std::floor(p.z() / block_size))};
}

std::map<BlockKey, double> adaptive_voxel_sizes(const SurfelCloud& cloud, const MeshConfig& cfg) {
  cfg.validate();
  const double b = cfg.block_size();
  std::map<BlockKey, std::size_t> counts;
  for (const Surfel& s : cloud) ++counts[block_of(s.position, b)];
  std::map<BlockKey, double> out;
  if (counts.empty()) return out;
  const double volume = b * b * b;
  std::vector<double> density;
  for (const auto& [key, c] : counts) density.push_back(static_cast<double>(c) / volume);
  std::vector<double> sorted = density;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t m = sorted.size();
  const double median = m % 2 ? sorted[m / 2] : 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]);
  std::size_t i = 0;
  for (const auto& [key, c] : counts) {
    const double ratio = median / density[i++];
    const double v = ratio == 1.0 ? cfg.base_voxel : cfg.base_voxel * std::cbrt(ratio);
    out[key] = std::clamp(v, cfg.voxel_min, cfg.voxel_max);
  }
  return out;
}

namespace {

BlockField splat_block(const SurfelCloud& cloud, const KdTree& tree, const BlockKey& key,
                       double block_size, int n, bool smooth) {
  BlockField f;
  f.key = key;
  f.n = n;
  f.voxel = block_size / n;
  f.origin = Vec3(key[0], key[1], key[2]) * block_size;
  f.value = ScalarGrid(n + 1, n + 1, n + 1, 0.0);
  f.weight = ScalarGrid(n + 1, n + 1, n + 1, 0.0);
  ScalarGrid signed_sum(n + 1, n + 1, n + 1, 0.0);

  const double voxel = f.voxel;
  const Vec3 centre = f.origin + Vec3::Constant(0.5 * block_size);
  const double reach = 0.5 * std::sqrt(3.0) * block_size + 9.0 * voxel;
  for (std::size_t idx : tree.radius_search(centre, reach)) {
    const Surfel& s = cloud[idx];
    const double sigma = std::clamp(s.scale.maxCoeff(), voxel, 3.0 * voxel);
    const double support = 3.0 * sigma;
    const Vec3 local = (s.position - f.origin) / voxel;
    int lo[3], hi[3];
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::max(0, static_cast<int>(std::ceil(local[a] - support / voxel)));
      hi[a] = std::min(n, static_cast<int>(std::floor(local[a] + support / voxel)));
    }
    const double inv = 1.0 / (2.0 * sigma * sigma);
    for (int k = lo[2]; k <= hi[2]; ++k)
      for (int j = lo[1]; j <= hi[1]; ++j)
        for (int i = lo[0]; i <= hi[0]; ++i) {
          const Vec3 x = f.origin + voxel * Vec3(i, j, k);
          const Vec3 d = x - s.position;
          const double r2 = d.squaredNorm();
          if (r2 > support * support) continue;
          const double w = std::exp(-r2 * inv);
          const std::size_t at = f.weight.index(i, j, k);
          f.weight.values[at] += w;
          signed_sum.values[at] += w * s.normal.dot(d);
        }
  }

  const double band = 2.0 * voxel;
  for (std::size_t i = 0; i < f.value.values.size(); ++i) {
    const double w = f.weight.values[i];
    if (w <= 0.0) continue;
    const double sd = signed_sum.values[i] / w;
    f.value.values[i] = std::clamp(0.5 - sd / (2.0 * band), 0.0, 1.0);
  }

  std::vector<double> positive;
  for (double w : f.weight.values)
    if (w > 0.0) positive.push_back(w);
  if (!positive.empty()) {
    const std::size_t q = std::min(positive.size() - 1, static_cast<std::size_t>(0.99 * positive.size()));
    std::nth_element(positive.begin(), positive.begin() + static_cast<std::ptrdiff_t>(q), positive.end());
    const double scale = positive[q];
    for (auto& w : f.weight.values) w = std::min(1.0, w / scale);
  }

  if (smooth) {
    ScalarGrid blurred = f.value;
    for (int k = 0; k <= n; ++k)
      for (int j = 0; j <= n; ++j)
        for (int i = 0; i <= n; ++i) {
          double sum = 0.0;
          int count = 0;
          for (int dk = -1; dk <= 1; ++dk)
            for (int dj = -1; dj <= 1; ++dj)
              for (int di = -1; di <= 1; ++di) {
                const int a = i + di, b = j + dj, c = k + dk;
                if (a < 0 || b < 0 || c < 0 || a > n || b > n || c > n) continue;
                sum += f.value(a, b, c);
                ++count;
              }
          blurred(i, j, k) = sum / count;
        }
    f.value = std::move(blurred);
  }
  return f;
}

}  // namespace

BlockField occupancy_from_points(const SurfelCloud& cloud, const BlockKey& key, double block_size,
                                 int n, bool smooth) {
  if (n < 1) throw DomainError("occupancy_from_points: need at least one cell per axis");
  std::vector<Vec3> pts(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) pts[i] = cloud[i].position;
  return splat_block(cloud, KdTree(pts), key, block_size, n, smooth);
}

}  // namespace mvg::meshing

namespace mvg::meshing {

namespace {

struct CellHash {
  std::size_t operator()(const std::array<std::int64_t, 3>& c) const {
    return static_cast<std::size_t>(c[0] * 73856093) ^ static_cast<std::size_t>(c[1] * 19349663) ^
           static_cast<std::size_t>(c[2] * 83492791);
  }
};

std::uint64_t edge_key(std::uint32_t a, std::uint32_t b) {
  return (static_cast<std::uint64_t>(a) << 32) | b;
}

double area_of(const Vec3& a, const Vec3& b, const Vec3& c) { return 0.5 * (b - a).cross(c - a).norm(); }

}  // namespace

std::vector<std::uint32_t> weld_vertices(TriangleMesh& mesh, double tol,
                                         const std::vector<std::uint8_t>& weldable,
                                         const std::vector<int>* group) {
  const std::size_t n = mesh.vertices.size();
  std::vector<std::uint32_t> rep(n);
  std::unordered_map<std::array<std::int64_t, 3>, std::vector<std::uint32_t>, CellHash> cells;
  const double cell = tol > 0.0 ? tol : 1.0;
  auto cell_of = [&](const Vec3& p) {
    return std::array<std::int64_t, 3>{static_cast<std::int64_t>(std::floor(p.x() / cell)),
                                       static_cast<std::int64_t>(std::floor(p.y() / cell)),
                                       static_cast<std::int64_t>(std::floor(p.z() / cell))};
  };
  for (std::size_t i = 0; i < n; ++i) {
    rep[i] = static_cast<std::uint32_t>(i);
    if (!weldable[i]) continue;
    const Vec3& p = mesh.vertices[i];
    const auto c = cell_of(p);
    std::uint32_t best = static_cast<std::uint32_t>(i);
    for (int dz = -1; dz <= 1; ++dz)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const auto it = cells.find({c[0] + dx, c[1] + dy, c[2] + dz});
          if (it == cells.end()) continue;
          for (std::uint32_t r : it->second) {
            if (r >= best) continue;
            if (group && (*group)[r] == (*group)[i]) continue;
            if ((mesh.vertices[r] - p).norm() <= tol) best = r;
          }
        }
    if (best != i) {
      rep[i] = best;
    } else {
      cells[c].push_back(static_cast<std::uint32_t>(i));
    }
  }

  std::vector<std::uint32_t> remap(n);
  std::vector<Vec3> kept;
  for (std::size_t i = 0; i < n; ++i) {
    if (rep[i] == i) {
      remap[i] = static_cast<std::uint32_t>(kept.size());
      kept.push_back(mesh.vertices[i]);
    } else {
      remap[i] = remap[rep[i]];
    }
  }
  mesh.vertices = std::move(kept);
  mesh.normals.clear();
  std::vector<std::array<std::uint32_t, 3>> tris;
  for (auto t : mesh.triangles) {
    for (auto& v : t) v = remap[v];
    if (t[0] != t[1] && t[1] != t[2] && t[2] != t[0]) tris.push_back(t);
  }
  mesh.triangles = std::move(tris);
  return remap;
}

std::size_t remove_degenerate(TriangleMesh& mesh) {
  std::vector<std::array<std::uint32_t, 3>> tris;
  for (const auto& t : mesh.triangles) {
    if (t[0] == t[1] || t[1] == t[2] || t[2] == t[0]) continue;
    if (!(area_of(mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]) > 0.0)) continue;
    tris.push_back(t);
  }
  const std::size_t removed = mesh.triangles.size() - tris.size();
  mesh.triangles = std::move(tris);
  return removed;
}

std::size_t fill_sliver_holes(TriangleMesh& mesh, const std::vector<std::uint8_t>& flagged,
                              std::size_t max_loop) {
  // Directed half-edges and the triangle owning each.
  std::unordered_map<std::uint64_t, std::size_t> half;
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    const auto& tri = mesh.triangles[t];
    for (int e = 0; e < 3; ++e) half[edge_key(tri[e], tri[(e + 1) % 3])] = t;
  }
  // Boundary half-edges: twin missing.
  std::map<std::uint32_t, std::vector<std::uint32_t>> out_edges;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> boundary;
  for (const auto& tri : mesh.triangles)
    for (int e = 0; e < 3; ++e) {
      const std::uint32_t a = tri[e], b = tri[(e + 1) % 3];
      if (half.count(edge_key(b, a)) || !flagged[a] || !flagged[b]) continue;
      out_edges[a].push_back(b);
      boundary.emplace_back(a, b);
    }
  for (auto& [v, targets] : out_edges) std::sort(targets.begin(), targets.end());
  std::sort(boundary.begin(), boundary.end());

  // Each boundary half-edge x->y closes the shortest boundary path y ~> x;
  // at pinched vertices this switches between the fans meeting there.
  std::set<std::uint64_t> used;
  std::vector<std::size_t> drop;
  std::vector<std::array<std::uint32_t, 3>> added;
  std::size_t filled = 0;
  for (const auto& [x, y] : boundary) {
    if (used.count(edge_key(x, y))) continue;
    std::map<std::uint32_t, std::uint32_t> parent{{y, y}};
    std::vector<std::uint32_t> frontier{y};
    bool found = false;
    for (std::size_t depth = 1; depth < max_loop && !frontier.empty() && !found; ++depth) {
      std::vector<std::uint32_t> next_frontier;
      for (std::uint32_t v : frontier) {
        const auto it = out_edges.find(v);
        if (it == out_edges.end()) continue;
        for (std::uint32_t w : it->second) {
          if (parent.count(w) || used.count(edge_key(v, w))) continue;
          if (w == x && !(v == y && depth == 1)) {
            parent.emplace(w, v);
            found = true;
            break;
          }
          if (w == x) continue;
          parent.emplace(w, v);
          next_frontier.push_back(w);
        }
        if (found) break;
      }
      frontier = std::move(next_frontier);
    }
    if (!found) continue;
    std::vector<std::uint32_t> tail;  // x, ..., y walking parents back
    for (std::uint32_t v = x; v != y; v = parent.at(v)) tail.push_back(v);
    tail.push_back(y);
    // loop follows the half-edges: x -> y -> ... -> x
    std::vector<std::uint32_t> loop{x};
    for (std::size_t i = tail.size() - 1; i > 0; --i) loop.push_back(tail[i]);
    if (loop.size() < 3) continue;
    for (std::size_t i = 0; i < loop.size(); ++i)
      used.insert(edge_key(loop[i], loop[(i + 1) % loop.size()]));

    // Fan over the reversed loop from the apex maximising the smallest area.
    const std::size_t m = loop.size();
    std::vector<std::uint32_t> rev(m);
    for (std::size_t i = 0; i < m; ++i) rev[i] = loop[(m - i) % m];
    double best_area = -1.0;
    std::size_t best_apex = 0;
    for (std::size_t a = 0; a < m; ++a) {
      double smallest = std::numeric_limits<double>::infinity();
      for (std::size_t j = 1; j + 1 < m; ++j)
        smallest = std::min(smallest, area_of(mesh.vertices[rev[a]], mesh.vertices[rev[(a + j) % m]],
                                              mesh.vertices[rev[(a + j + 1) % m]]));
      if (smallest > best_area) {
        best_area = smallest;
        best_apex = a;
      }
    }
    double longest = 0.0;
    for (std::size_t i = 0; i < m; ++i)
      longest = std::max(longest, (mesh.vertices[loop[i]] - mesh.vertices[loop[(i + 1) % m]]).norm());
    if (best_area > 1e-12 * longest * longest) {
      for (std::size_t j = 1; j + 1 < m; ++j)
        added.push_back({rev[best_apex], rev[(best_apex + j) % m], rev[(best_apex + j + 1) % m]});
      ++filled;
      continue;
    }

    // Flat loop (a T-junction): split the triangle on the longest edge u->v
    // along the chain running from u back to v.
    std::size_t e = 0;
    for (std::size_t i = 0; i < m; ++i)
      if ((mesh.vertices[loop[i]] - mesh.vertices[loop[(i + 1) % m]]).norm() >
          (mesh.vertices[loop[e]] - mesh.vertices[loop[(e + 1) % m]]).norm())
        e = i;
    const std::uint32_t u = loop[e], w_end = loop[(e + 1) % m];
    const std::size_t t = half.at(edge_key(u, w_end));
    const auto& tri = mesh.triangles[t];
    std::uint32_t apex = tri[0];
    for (auto x : tri)
      if (x != u && x != w_end) apex = x;
    std::vector<std::uint32_t> path{u};
    for (std::size_t i = 1; i < m; ++i) path.push_back(loop[(e + m - i) % m]);
    // path: u, loop[e-1], ..., loop[e+1] = v
    if (std::find(drop.begin(), drop.end(), t) != drop.end()) continue;  // split once only
    drop.push_back(t);
    for (std::size_t i = 0; i + 1 < path.size(); ++i) added.push_back({path[i], path[i + 1], apex});
    ++filled;
  }

  if (!drop.empty()) {
    std::sort(drop.begin(), drop.end());
    drop.erase(std::unique(drop.begin(), drop.end()), drop.end());
    std::vector<std::array<std::uint32_t, 3>> tris;
    std::size_t d = 0;
    for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
      if (d < drop.size() && drop[d] == t) {
        ++d;
        continue;
      }
      tris.push_back(mesh.triangles[t]);
    }
    mesh.triangles = std::move(tris);
  }
  mesh.triangles.insert(mesh.triangles.end(), added.begin(), added.end());
  return filled;
}

void laplacian_smooth(TriangleMesh& mesh, int iterations, double lambda) {
  const std::size_t n = mesh.vertices.size();
  std::vector<std::set<std::uint32_t>> adj(n);
  for (const auto& t : mesh.triangles)
    for (int e = 0; e < 3; ++e) {
      adj[t[e]].insert(t[(e + 1) % 3]);
      adj[t[(e + 1) % 3]].insert(t[e]);
    }
  for (int it = 0; it < iterations; ++it) {
    std::vector<Vec3> next = mesh.vertices;
    parallel_for(n, [&](std::size_t i) {
      if (adj[i].empty()) return;
      Vec3 c = Vec3::Zero();
      for (auto j : adj[i]) c += mesh.vertices[j];
      c /= static_cast<double>(adj[i].size());
      next[i] = mesh.vertices[i] + lambda * (c - mesh.vertices[i]);
    });
    mesh.vertices = std::move(next);
  }
}

}  // namespace mvg::meshing

namespace mvg::meshing {

namespace {

/// Cells per block axis: 32 * 2^k nearest to the requested voxel in log scale,
/// restricted to voxels inside [voxel_min, voxel_max]. Power-of-two ratios
/// keep the node lattices of neighbouring blocks nested.
int snap_cells(double voxel, const MeshConfig& cfg) {
  const double b = cfg.block_size();
  int best = 32;
  double best_err = std::numeric_limits<double>::infinity();
  for (int k = -5; k <= 10; ++k) {
    const double n = std::ldexp(32.0, k);
    const double v = b / n;
    if (v < cfg.voxel_min * (1.0 - 1e-9) || v > cfg.voxel_max * (1.0 + 1e-9)) continue;
    const double err = std::abs(std::log(v / voxel));
    if (err < best_err - 1e-12) {
      best_err = err;
      best = static_cast<int>(n);
    }
  }
  return best;
}

struct Sample {
  double value, weight;
};

/// Trilinear sample of a block at a node of the global lattice with `fine`
/// cells per block edge; the point must lie in the block's closed box.
Sample sample_block(const BlockField& f, const std::array<std::int64_t, 3>& global, std::int64_t fine) {
  const std::int64_t step = fine / f.n;
  int idx[3];
  double t[3];
  for (int a = 0; a < 3; ++a) {
    const std::int64_t rel = global[a] - static_cast<std::int64_t>(f.key[a]) * fine;
    idx[a] = static_cast<int>(rel / step);
    t[a] = static_cast<double>(rel % step) / static_cast<double>(step);
    if (idx[a] >= f.n) {
      idx[a] = f.n - 1;
      t[a] = 1.0;
    }
  }
  Sample s{0.0, 0.0};
  for (int c = 0; c < 8; ++c) {
    const int dx = c & 1, dy = (c >> 1) & 1, dz = (c >> 2) & 1;
    const double w = (dx ? t[0] : 1 - t[0]) * (dy ? t[1] : 1 - t[1]) * (dz ? t[2] : 1 - t[2]);
    if (w == 0.0) continue;
    s.value += w * f.value(idx[0] + dx, idx[1] + dy, idx[2] + dz);
    s.weight += w * f.weight(idx[0] + dx, idx[1] + dy, idx[2] + dz);
  }
  return s;
}

template <typename T>
std::vector<T> carry(const std::vector<T>& attr, const std::vector<std::uint32_t>& remap,
                     std::size_t size, bool merge_or) {
  std::vector<T> out(size, T{});
  std::vector<std::uint8_t> set(size, 0);
  for (std::size_t i = 0; i < remap.size(); ++i) {
    const auto j = remap[i];
    if (!set[j]) {
      out[j] = attr[i];
      set[j] = 1;
    } else if (merge_or) {
      out[j] = out[j] || attr[i];
    }
  }
  return out;
}

void drop_unused_vertices(TriangleMesh& mesh) {
  std::vector<std::int64_t> remap(mesh.vertices.size(), -1);
  std::vector<Vec3> kept;
  for (auto& t : mesh.triangles)
    for (auto& v : t) {
      if (remap[v] < 0) {
        remap[v] = static_cast<std::int64_t>(kept.size());
        kept.push_back(mesh.vertices[v]);
      }
      v = static_cast<std::uint32_t>(remap[v]);
    }
  mesh.vertices = std::move(kept);
}

}  // namespace

TriangleMesh extract_mesh(const SurfelCloud& cloud, const std::vector<View>& views,
                          const std::vector<NormalMap>& normal_maps, const MeshConfig& cfg,
                          MeshStats* stats) {
  cfg.validate();
  MeshStats st;
  st.input_points = cloud.size();
  SurfelCloud pts = crop_and_filter(cloud, cfg);
  if (!normal_maps.empty() && cfg.smooth_steps > 0) {
    SmoothStats ss;
    pts = multiview_normal_smooth(pts, views, normal_maps, cfg, &ss);
    st.invisible_points = ss.invisible;
  }
  st.kept_points = pts.size();

  const double b = cfg.block_size();
  std::map<BlockKey, int> cells;
  for (const auto& [key, v] : adaptive_voxel_sizes(pts, cfg)) cells[key] = snap_cells(v, cfg);
  // Empty blocks within splat reach of a point take the finest resolution
  // among the blocks that reach them.
  std::map<BlockKey, int> extra;
  for (const Surfel& s : pts) {
    const int n = cells.at(block_of(s.position, b));
    const double reach = 9.0 * b / n;
    const BlockKey lo = block_of(s.position - Vec3::Constant(reach), b);
    const BlockKey hi = block_of(s.position + Vec3::Constant(reach), b);
    for (int z = lo[2]; z <= hi[2]; ++z)
      for (int y = lo[1]; y <= hi[1]; ++y)
        for (int x = lo[0]; x <= hi[0]; ++x) {
          const BlockKey key{x, y, z};
          if (cells.count(key)) continue;
          int& e = extra[key];
          e = std::max(e, n);
        }
  }
  cells.insert(extra.begin(), extra.end());

  // Coarse blocks first, then ascending key; seam owners always precede.
  std::vector<std::pair<int, BlockKey>> order;
  for (const auto& [key, n] : cells) order.emplace_back(n, key);
  std::sort(order.begin(), order.end());
  std::map<BlockKey, std::size_t> slot;
  std::int64_t fine = 1;
  for (std::size_t i = 0; i < order.size(); ++i) {
    slot[order[i].second] = i;
    fine = std::max<std::int64_t>(fine, order[i].first);
    ++st.blocks_per_voxel[b / order[i].first];
  }
  st.blocks = order.size();

  std::vector<Vec3> positions(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) positions[i] = pts[i].position;
  const KdTree tree(positions);
  std::vector<BlockField> fields(order.size());
  parallel_for(order.size(), [&](std::size_t i) {
    fields[i] = splat_block(pts, tree, order[i].second, b, order[i].first, cfg.smooth_mesh);
  });

  // Boundary nodes take the field of the coarsest block containing them so
  // both sides of every seam see identical values on shared nodes.
  for (std::size_t bi = 0; bi < fields.size(); ++bi) {
    BlockField& f = fields[bi];
    const std::int64_t step = fine / f.n;
    for (int k = 0; k <= f.n; ++k)
      for (int j = 0; j <= f.n; ++j)
        for (int i = 0; i <= f.n; ++i) {
          const int idx[3] = {i, j, k};
          if (i != 0 && j != 0 && k != 0 && i != f.n && j != f.n && k != f.n) continue;
          std::size_t owner = bi;
          for (int c = 0; c < 27; ++c) {
            const int off[3] = {c % 3 - 1, (c / 3) % 3 - 1, c / 9 - 1};
            bool ok = true;
            BlockKey key = f.key;
            for (int a = 0; a < 3; ++a) {
              if (off[a] == -1 && idx[a] != 0) ok = false;
              if (off[a] == 1 && idx[a] != f.n) ok = false;
              key[a] += off[a];
            }
            if (!ok) continue;
            const auto it = slot.find(key);
            if (it != slot.end() && it->second < owner) owner = it->second;
          }
          if (owner == bi) continue;
          std::array<std::int64_t, 3> global;
          for (int a = 0; a < 3; ++a) global[a] = static_cast<std::int64_t>(f.key[a]) * fine + idx[a] * step;
          const Sample s = sample_block(fields[owner], global, fine);
          f.value(i, j, k) = s.value;
          f.weight(i, j, k) = s.weight;
        }
  }

  std::vector<TriangleMesh> parts(fields.size());
  parallel_for(fields.size(), [&](std::size_t i) {
    const BlockField& f = fields[i];
    std::vector<std::uint8_t> active(f.weight.values.size());
    for (std::size_t p = 0; p < active.size(); ++p) active[p] = f.weight.values[p] >= 0.01;
    parts[i] = marching_cubes(f.value, cfg.iso, f.voxel, f.origin, &active);
    // Occupancy rises inward; flip so normals face out.
    for (auto& t : parts[i].triangles) std::swap(t[1], t[2]);
  });

  TriangleMesh mesh;
  std::vector<int> group;
  std::vector<std::uint8_t> seam;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const auto base = static_cast<std::uint32_t>(mesh.vertices.size());
    const BlockField& f = fields[i];
    for (const Vec3& p : parts[i].vertices) {
      const Vec3 local = (p - f.origin) / f.voxel;
      bool on_face = false;
      for (int a = 0; a < 3; ++a)
        on_face |= std::abs(local[a]) < 1e-7 || std::abs(local[a] - f.n) < 1e-7;
      mesh.vertices.push_back(p);
      group.push_back(static_cast<int>(i));
      seam.push_back(on_face);
    }
    for (auto t : parts[i].triangles) {
      for (auto& v : t) v += base;
      mesh.triangles.push_back(t);
    }
  }
  fields.clear();
  parts.clear();

  const std::size_t before = mesh.vertices.size();
  // Coincident vertices (level set through a node) merge everywhere.
  std::vector<std::uint32_t> remap =
      weld_vertices(mesh, 1e-9 * cfg.voxel_min, std::vector<std::uint8_t>(before, 1));
  group = carry(group, remap, mesh.vertices.size(), false);
  seam = carry(seam, remap, mesh.vertices.size(), true);
  remap = weld_vertices(mesh, 0.5 * cfg.voxel_min, seam, &group);
  seam = carry(seam, remap, mesh.vertices.size(), true);
  st.welded = before - mesh.vertices.size();
  st.degenerate_removed = remove_degenerate(mesh);
  st.slivers_filled = fill_sliver_holes(mesh, seam);

  const BBox keep = cfg.bbox.dilated(cfg.voxel_max);
  std::vector<std::array<std::uint32_t, 3>> tris;
  for (const auto& t : mesh.triangles)
    if (keep.contains(mesh.vertices[t[0]]) && keep.contains(mesh.vertices[t[1]]) &&
        keep.contains(mesh.vertices[t[2]]))
      tris.push_back(t);
  mesh.triangles = std::move(tris);
  drop_unused_vertices(mesh);
  if (cfg.laplacian_smooth) laplacian_smooth(mesh, cfg.laplacian_iterations);
  mesh.normals = vertex_normals(mesh);
  if (stats) *stats = st;
  return mesh;
}

}  // namespace mvg::meshing
