#include "trajlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace trajlab::metrics {

namespace {

double pdist(const dataio::RawPoint& a, const dataio::RawPoint& b) {
  return geo::haversine_m({a.lat, a.lon}, {b.lat, b.lon});
}

double directed_hausdorff(const dataio::Trajectory& a, const dataio::Trajectory& b) {
  double worst = 0.0;
  for (const auto& pa : a.points) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& pb : b.points) {
      best = std::min(best, pdist(pa, pb));
    }
    worst = std::max(worst, best);
  }
  return worst;
}

double cross(const geo::LocalPoint& o, const geo::LocalPoint& a, const geo::LocalPoint& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

std::string format_value(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace

double mean_euclidean(const dataio::Trajectory& a, const dataio::Trajectory& b) {
  if (a.size() != b.size()) throw std::domain_error("mean_euclidean: length mismatch");
  if (a.points.empty()) throw std::domain_error("mean_euclidean: empty trajectory");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sum += pdist(a.points[i], b.points[i]);
  }
  return sum / static_cast<double>(a.size());
}

double hausdorff(const dataio::Trajectory& a, const dataio::Trajectory& b) {
  if (a.points.empty() || b.points.empty()) {
    throw std::domain_error("hausdorff: empty trajectory");
  }
  return std::max(directed_hausdorff(a, b), directed_hausdorff(b, a));
}

std::vector<geo::LocalPoint> convex_hull(std::vector<geo::LocalPoint> pts) {
  std::sort(pts.begin(), pts.end(), [](const geo::LocalPoint& a, const geo::LocalPoint& b) {
    return a.x != b.x ? a.x < b.x : a.y < b.y;
  });
  pts.erase(std::unique(pts.begin(), pts.end(),
                        [](const geo::LocalPoint& a, const geo::LocalPoint& b) {
                          return a.x == b.x && a.y == b.y;
                        }),
            pts.end());
  const std::size_t n = pts.size();
  if (n < 3) return pts;

  std::vector<geo::LocalPoint> hull(2 * n);
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i) {  // lower
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0.0) --k;
    hull[k++] = pts[i];
  }
  const std::size_t lower = k + 1;
  for (std::size_t i = n - 1; i-- > 0;) {  // upper
    while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0.0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);  // last point equals the first
  return hull;
}

double polygon_area(std::span<const geo::LocalPoint> poly) {
  if (poly.size() < 3) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const auto& a = poly[i];
    const auto& b = poly[(i + 1) % poly.size()];
    s += a.x * b.y - b.x * a.y;
  }
  return 0.5 * std::fabs(s);
}

std::vector<geo::LocalPoint> convex_clip(std::span<const geo::LocalPoint> subject,
                                         std::span<const geo::LocalPoint> clip) {
  if (subject.size() < 3 || clip.size() < 3) return {};
  std::vector<geo::LocalPoint> out(subject.begin(), subject.end());
  for (std::size_t e = 0; e < clip.size() && !out.empty(); ++e) {
    const geo::LocalPoint& ca = clip[e];
    const geo::LocalPoint& cb = clip[(e + 1) % clip.size()];
    std::vector<geo::LocalPoint> in;
    in.swap(out);
    const auto inside = [&](const geo::LocalPoint& p) { return cross(ca, cb, p) >= 0.0; };
    const auto intersect = [&](const geo::LocalPoint& s, const geo::LocalPoint& t) {
      const double dx = cb.x - ca.x, dy = cb.y - ca.y;
      const double denom = dx * (t.y - s.y) - dy * (t.x - s.x);
      const double u = (dy * (s.x - ca.x) - dx * (s.y - ca.y)) / denom;
      return geo::LocalPoint{s.x + u * (t.x - s.x), s.y + u * (t.y - s.y)};
    };
    for (std::size_t i = 0; i < in.size(); ++i) {
      const geo::LocalPoint& s = in[i];
      const geo::LocalPoint& t = in[(i + 1) % in.size()];
      if (inside(t)) {
        if (!inside(s)) out.push_back(intersect(s, t));
        out.push_back(t);
      } else if (inside(s)) {
        out.push_back(intersect(s, t));
      }
    }
  }
  return out;
}

double jaccard_hulls(const dataio::Trajectory& a, const dataio::Trajectory& b,
                     const geo::ReferenceFrame& ref) {
  const auto project = [&](const dataio::Trajectory& t) {
    std::vector<geo::LocalPoint> pts;
    pts.reserve(t.size());
    for (const auto& p : t.points) pts.push_back(geo::to_local(ref, {p.lat, p.lon}));
    return pts;
  };
  const auto ha = convex_hull(project(a));
  const auto hb = convex_hull(project(b));
  const double area_a = polygon_area(ha);
  const double area_b = polygon_area(hb);
  const double inter =
      (area_a > 0.0 && area_b > 0.0) ? polygon_area(convex_clip(ha, hb)) : 0.0;
  const double uni = area_a + area_b - inter;
  if (uni <= 0.0) {
    // both hulls degenerate: identical vertex sets count as full overlap
    auto sa = ha, sb = hb;
    const auto lt = [](const geo::LocalPoint& p, const geo::LocalPoint& q) {
      return p.x != q.x ? p.x < q.x : p.y < q.y;
    };
    std::sort(sa.begin(), sa.end(), lt);
    std::sort(sb.begin(), sb.end(), lt);
    const bool same = sa.size() == sb.size() &&
                      std::equal(sa.begin(), sa.end(), sb.begin(),
                                 [](const geo::LocalPoint& p, const geo::LocalPoint& q) {
                                   return p.x == q.x && p.y == q.y;
                                 });
    return same ? 1.0 : 0.0;
  }
  return inter / uni;
}

std::optional<double> pct_reduction(double op, double or_) {
  if (op == 0.0) return std::nullopt;
  return (op - or_) / std::fabs(op) * 100.0;
}

namespace {

struct MeanCi {
  double mean = 0.0;
  double ci99 = 0.0;
  std::size_t n = 0;
};

MeanCi mean_ci99(const std::vector<double>& xs) {
  MeanCi r;
  r.n = xs.size();
  if (xs.empty()) return r;
  double sum = 0.0;
  for (double x : xs) sum += x;
  r.mean = sum / static_cast<double>(xs.size());
  if (xs.size() < 2) return r;  // s = 0 definitional for n = 1
  double ss = 0.0;
  for (double x : xs) ss += (x - r.mean) * (x - r.mean);
  const double s = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  r.ci99 = 2.576 * s / std::sqrt(static_cast<double>(xs.size()));
  return r;
}

}  // namespace

Summary summarize(std::span<const EvalRecord> records) {
  if (records.empty()) throw std::invalid_argument("summarize: no records");
  std::vector<double> euclid, hausd;
  double jb = 0.0, ja = 0.0;
  std::size_t excluded = 0;
  for (const auto& r : records) {
    if (const auto e = pct_reduction(r.op_euclid, r.or_euclid)) {
      euclid.push_back(*e);
    } else {
      ++excluded;
    }
    if (const auto h = pct_reduction(r.op_hausdorff, r.or_hausdorff)) {
      hausd.push_back(*h);
    } else {
      ++excluded;
    }
    jb += r.jaccard_before;
    ja += r.jaccard_after;
  }
  Summary s;
  const MeanCi me = mean_ci99(euclid);
  const MeanCi mh = mean_ci99(hausd);
  s.mean_euclid_reduction_pct = me.mean;
  s.ci99_euclid = me.ci99;
  s.mean_hausdorff_reduction_pct = mh.mean;
  s.ci99_hausdorff = mh.ci99;
  s.mean_jaccard_before = jb / static_cast<double>(records.size());
  s.mean_jaccard_after = ja / static_cast<double>(records.size());
  s.n = records.size();
  s.excluded_zero_op = excluded;
  return s;
}

void write_records_csv(std::span<const EvalRecord> records, std::ostream& out) {
  out << "traj_id,op_euclid,or_euclid,op_hausdorff,or_hausdorff,"
         "jaccard_before,jaccard_after\n";
  for (const auto& r : records) {
    out << r.traj_id << ',' << format_value(r.op_euclid) << ','
        << format_value(r.or_euclid) << ',' << format_value(r.op_hausdorff) << ','
        << format_value(r.or_hausdorff) << ',' << format_value(r.jaccard_before) << ','
        << format_value(r.jaccard_after) << '\n';
  }
}

void append_result_row(const std::string& path, const std::string& id,
                       const std::string& dataset_train, const std::string& dataset_test,
                       const std::string& mech_train, const std::string& mech_test,
                       double eps_train, double eps_test, const Summary& s) {
  const bool fresh = !std::ifstream(path).good();
  std::ofstream out(path, std::ios::app);
  if (!out) throw std::runtime_error("cannot open result table: " + path);
  if (fresh) out << kResultHeader << '\n';
  out << id << ',' << dataset_train << ',' << dataset_test << ',' << mech_train << ','
      << mech_test << ',' << format_value(eps_train) << ',' << format_value(eps_test)
      << ',' << format_value(s.mean_euclid_reduction_pct) << ','
      << format_value(s.mean_hausdorff_reduction_pct) << ','
      << format_value(s.mean_jaccard_before) << ',' << format_value(s.mean_jaccard_after)
      << '\n';
}

}  // namespace trajlab::metrics
