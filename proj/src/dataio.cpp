#include "trajlab/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>

#include "trajlab/geo.hpp"

namespace trajlab::dataio {

namespace {

double point_dist_m(const RawPoint& a, const RawPoint& b) {
  return geo::haversine_m({a.lat, a.lon}, {b.lat, b.lon});
}

bool coords_in_range(double lat, double lon) {
  return geo::GeoPoint{lat, lon}.valid();
}

bool parse_double(const std::string& s, double& out) {
  try {
    std::size_t pos = 0;
    out = std::stod(s, &pos);
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    return pos == s.size() && std::isfinite(out);
  } catch (const std::exception&) {
    return false;
  }
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  fields.push_back(cur);
  return fields;
}

bool parse_datetime(const std::string& date, const std::string& time, std::int64_t& epoch) {
  int y, mo, d, h, mi, s;
  if (std::sscanf(date.c_str(), "%d-%d-%d", &y, &mo, &d) != 3) return false;
  if (std::sscanf(time.c_str(), "%d:%d:%d", &h, &mi, &s) != 3) return false;
  if (mo < 1 || mo > 12 || d < 1 || d > 31 || h < 0 || h > 23 || mi < 0 || mi > 59 ||
      s < 0 || s > 60) {
    return false;
  }
  epoch = civil_to_epoch(y, mo, d, h, mi, s);
  return epoch >= 0;
}

void sort_points(Trajectory& t) {
  std::stable_sort(t.points.begin(), t.points.end(),
                   [](const RawPoint& a, const RawPoint& b) { return a.timestamp < b.timestamp; });
}

// rank = nearest integer to level*n, clamped to [1, n]; 1-based into sorted
double nearest_rank_quantile(const std::vector<double>& sorted, double level) {
  const auto n = static_cast<long long>(sorted.size());
  long long rank = std::llround(level * static_cast<double>(n));
  rank = std::clamp(rank, 1LL, n);
  return sorted[static_cast<std::size_t>(rank - 1)];
}

}  // namespace

std::string PreprocessSummary::to_text() const {
  std::ostringstream os;
  for (const auto& s : stages) {
    os << "stage=" << s.stage << " kept=" << s.kept << " dropped=" << s.dropped << "\n";
  }
  return os.str();
}

std::int64_t civil_to_epoch(int year, int month, int day, int hour, int minute, int second) {
  // days_from_civil (Howard Hinnant's algorithm)
  std::int64_t y = year;
  y -= month <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const std::int64_t yoe = y - era * 400;
  const std::int64_t doy = (153 * (month + (month > 2 ? -3 : 9)) + 2) / 5 + day - 1;
  const std::int64_t doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  const std::int64_t days = era * 146097 + doe - 719468;
  return days * 86400 + hour * 3600 + minute * 60 + second;
}

std::vector<Trajectory> parse_tdrive(std::istream& in) {
  if (!in) throw std::runtime_error("parse_tdrive: unreadable stream");
  std::vector<Trajectory> trajs;
  std::map<std::string, std::size_t> index;
  std::string line;
  std::size_t total = 0, malformed = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    ++total;
    const auto f = split_csv(line);
    double lon, lat;
    std::int64_t ts;
    std::string date, time;
    if (f.size() == 4) {
      const auto sp = f[1].find(' ');
      if (sp != std::string::npos) {
        date = f[1].substr(0, sp);
        time = f[1].substr(sp + 1);
      }
    }
    if (f.size() != 4 || f[0].empty() || !parse_datetime(date, time, ts) ||
        !parse_double(f[2], lon) || !parse_double(f[3], lat) ||
        !coords_in_range(lat, lon)) {
      ++malformed;
      continue;
    }
    auto [it, inserted] = index.try_emplace(f[0], trajs.size());
    if (inserted) trajs.push_back(Trajectory{f[0], f[0], {}});
    trajs[it->second].points.push_back({lat, lon, ts});
  }
  if (in.bad()) throw std::runtime_error("parse_tdrive: I/O error");
  if (total > 0 && malformed * 2 > total) {
    throw FormatError("parse_tdrive: more than half the lines are malformed");
  }
  for (auto& t : trajs) sort_points(t);
  return trajs;
}

namespace {

Trajectory parse_plt(const std::filesystem::path& file, const std::string& user_id) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("parse_geolife: cannot open " + file.string());
  std::string line;
  for (int i = 0; i < 6; ++i) {
    if (!std::getline(in, line)) {
      throw FormatError("parse_geolife: missing header lines in " + file.string());
    }
  }
  Trajectory t{user_id, file.stem().string(), {}};
  std::size_t total = 0, malformed = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    ++total;
    const auto f = split_csv(line);
    double lat, lon;
    std::int64_t ts;
    if (f.size() < 7 || !parse_double(f[0], lat) || !parse_double(f[1], lon) ||
        !parse_datetime(f[5], f[6], ts) || !coords_in_range(lat, lon)) {
      ++malformed;
      continue;
    }
    t.points.push_back({lat, lon, ts});
  }
  if (total > 0 && malformed * 2 > total) {
    throw FormatError("parse_geolife: more than half the lines are malformed in " +
                      file.string());
  }
  sort_points(t);
  return t;
}

}  // namespace

std::vector<Trajectory> parse_geolife(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) {
    throw std::runtime_error("parse_geolife: not a directory: " + root.string());
  }
  std::vector<fs::path> users;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) users.push_back(e.path());
  }
  std::sort(users.begin(), users.end());
  std::vector<Trajectory> trajs;
  for (const auto& user_dir : users) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(user_dir)) {
      if (e.is_regular_file() && e.path().extension() == ".plt") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      Trajectory t = parse_plt(f, user_dir.filename().string());
      if (!t.points.empty()) trajs.push_back(std::move(t));
    }
  }
  return trajs;
}

BBox bbox_quantiles(std::span<const Trajectory> trajs, double percentile) {
  if (!(percentile > 0.0 && percentile <= 1.0)) {
    throw std::invalid_argument("bbox_quantiles: percentile must be in (0, 1]");
  }
  std::vector<double> lats, lons;
  for (const auto& t : trajs) {
    for (const auto& p : t.points) {
      lats.push_back(p.lat);
      lons.push_back(p.lon);
    }
  }
  if (lats.empty()) throw std::invalid_argument("bbox_quantiles: empty dataset");
  std::sort(lats.begin(), lats.end());
  std::sort(lons.begin(), lons.end());
  const double lo = (1.0 - percentile) / 2.0;
  const double hi = (1.0 + percentile) / 2.0;
  return {nearest_rank_quantile(lats, lo), nearest_rank_quantile(lats, hi),
          nearest_rank_quantile(lons, lo), nearest_rank_quantile(lons, hi)};
}

std::vector<Trajectory> filter_bbox(const std::vector<Trajectory>& trajs,
                                    double percentile, BBox* box_out) {
  const BBox box = bbox_quantiles(trajs, percentile);
  if (box_out) *box_out = box;
  std::vector<Trajectory> out;
  out.reserve(trajs.size());
  for (const auto& t : trajs) {
    Trajectory kept{t.user_id, t.traj_id, {}};
    for (const auto& p : t.points) {
      if (box.contains(p.lat, p.lon)) kept.points.push_back(p);
    }
    if (!kept.points.empty()) out.push_back(std::move(kept));
  }
  return out;
}

Trajectory dedupe(const Trajectory& traj) {
  Trajectory out{traj.user_id, traj.traj_id, {}};
  const auto& pts = traj.points;
  std::size_t i = 0;
  while (i < pts.size()) {
    std::size_t j = i + 1;
    while (j < pts.size() && pts[j].timestamp == pts[i].timestamp) ++j;
    // distinct locations within the equal-timestamp group, first occurrence wins
    std::vector<RawPoint> group;
    for (std::size_t k = i; k < j; ++k) {
      bool seen = false;
      for (const auto& g : group) {
        if (g.lat == pts[k].lat && g.lon == pts[k].lon) {
          seen = true;
          break;
        }
      }
      if (!seen) group.push_back(pts[k]);
    }
    if (group.size() == 1) {
      out.points.push_back(group[0]);
    } else {
      const RawPoint* prev = out.points.empty() ? nullptr : &out.points.back();
      const RawPoint* next = j < pts.size() ? &pts[j] : nullptr;
      std::size_t best = 0;
      double best_score = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < group.size(); ++k) {
        double score = 0.0;
        if (prev) score += point_dist_m(*prev, group[k]);
        if (next) score += point_dist_m(group[k], *next);
        if (score < best_score) {
          best_score = score;
          best = k;
        }
      }
      out.points.push_back(group[best]);
    }
    i = j;
  }
  return out;
}

Trajectory filter_speed(const Trajectory& traj, double max_speed_mps) {
  Trajectory out{traj.user_id, traj.traj_id, {}};
  for (const auto& p : traj.points) {
    if (out.points.empty()) {
      out.points.push_back(p);
      continue;
    }
    const RawPoint& last = out.points.back();
    const double dt = static_cast<double>(p.timestamp - last.timestamp);
    if (dt <= 0.0) continue;  // non-increasing timestamp, drop
    if (point_dist_m(last, p) / dt > max_speed_mps) continue;
    out.points.push_back(p);
  }
  return out;
}

std::vector<Trajectory> split_by_gap(const Trajectory& traj, std::int64_t gap_seconds) {
  std::vector<Trajectory> out;
  if (traj.points.empty()) return out;
  std::size_t seg = 0;
  Trajectory cur{traj.user_id, traj.traj_id + "_" + std::to_string(seg), {traj.points[0]}};
  for (std::size_t i = 1; i < traj.points.size(); ++i) {
    if (traj.points[i].timestamp - traj.points[i - 1].timestamp > gap_seconds) {
      out.push_back(std::move(cur));
      ++seg;
      cur = Trajectory{traj.user_id, traj.traj_id + "_" + std::to_string(seg), {}};
    }
    cur.points.push_back(traj.points[i]);
  }
  out.push_back(std::move(cur));
  return out;
}

std::vector<Trajectory> filter_length(const std::vector<Trajectory>& trajs,
                                      std::size_t min_len, std::size_t max_len) {
  std::vector<Trajectory> out;
  for (const auto& t : trajs) {
    if (t.size() >= min_len && t.size() <= max_len) out.push_back(t);
  }
  return out;
}

std::size_t total_points(std::span<const Trajectory> trajs) {
  std::size_t n = 0;
  for (const auto& t : trajs) n += t.size();
  return n;
}

std::vector<Trajectory> preprocess(const std::vector<Trajectory>& trajs,
                                   const PreprocessConfig& cfg,
                                   PreprocessSummary* summary) {
  if (!(cfg.bbox_percentile > 0.0 && cfg.bbox_percentile <= 1.0) || cfg.min_len < 2 ||
      cfg.max_len < cfg.min_len) {
    throw std::invalid_argument("preprocess: invalid config");
  }
  PreprocessSummary sum;
  auto record = [&](const char* stage, std::size_t before, std::size_t after) {
    sum.stages.push_back({stage, after, before - after});
  };

  const std::size_t n0 = total_points(trajs);
  if (n0 == 0) {
    for (const char* stage : {"bbox", "dedupe", "speed", "split", "length"}) {
      record(stage, 0, 0);
    }
    if (summary) *summary = std::move(sum);
    return {};
  }
  auto stage1 = filter_bbox(trajs, cfg.bbox_percentile, &sum.bbox);
  record("bbox", n0, total_points(stage1));

  std::vector<Trajectory> stage2;
  stage2.reserve(stage1.size());
  for (const auto& t : stage1) {
    Trajectory d = dedupe(t);
    if (!d.points.empty()) stage2.push_back(std::move(d));
  }
  record("dedupe", total_points(stage1), total_points(stage2));

  std::vector<Trajectory> stage3;
  stage3.reserve(stage2.size());
  for (const auto& t : stage2) {
    Trajectory s = filter_speed(t, cfg.max_speed_mps);
    if (!s.points.empty()) stage3.push_back(std::move(s));
  }
  record("speed", total_points(stage2), total_points(stage3));

  std::vector<Trajectory> stage4;
  for (const auto& t : stage3) {
    for (auto& seg : split_by_gap(t, cfg.gap_seconds)) stage4.push_back(std::move(seg));
  }
  record("split", total_points(stage3), total_points(stage4));

  auto stage5 = filter_length(stage4, cfg.min_len, cfg.max_len);
  record("length", total_points(stage4), total_points(stage5));

  if (summary) *summary = std::move(sum);
  return stage5;
}

void write_canonical(std::span<const Trajectory> trajs, std::ostream& out) {
  out << "user_id,traj_id,latitude,longitude,timestamp\n";
  char buf[64];
  for (const auto& t : trajs) {
    if (t.user_id.find(',') != std::string::npos ||
        t.traj_id.find(',') != std::string::npos) {
      throw std::invalid_argument("write_canonical: ids must not contain commas");
    }
    for (const auto& p : t.points) {
      std::snprintf(buf, sizeof(buf), "%.7f,%.7f,%lld", p.lat, p.lon,
                    static_cast<long long>(p.timestamp));
      out << t.user_id << ',' << t.traj_id << ',' << buf << '\n';
    }
  }
  if (!out) throw std::runtime_error("write_canonical: write failed");
}

std::vector<Trajectory> read_canonical(std::istream& in) {
  if (!in) throw std::runtime_error("read_canonical: unreadable stream");
  std::string line;
  if (!std::getline(in, line)) throw FormatError("read_canonical: empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "user_id,traj_id,latitude,longitude,timestamp") {
    throw FormatError("read_canonical: unexpected header: " + line);
  }
  std::vector<Trajectory> trajs;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv(line);
    double lat, lon;
    std::int64_t ts;
    if (f.size() != 5 || !parse_double(f[2], lat) || !parse_double(f[3], lon)) {
      throw FormatError("read_canonical: bad row at line " + std::to_string(lineno));
    }
    try {
      ts = std::stoll(f[4]);
    } catch (const std::exception&) {
      throw FormatError("read_canonical: bad timestamp at line " + std::to_string(lineno));
    }
    if (trajs.empty() || trajs.back().user_id != f[0] || trajs.back().traj_id != f[1]) {
      trajs.push_back(Trajectory{f[0], f[1], {}});
    }
    trajs.back().points.push_back({lat, lon, ts});
  }
  if (in.bad()) throw std::runtime_error("read_canonical: I/O error");
  return trajs;
}

void write_canonical_file(std::span<const Trajectory> trajs,
                          const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  write_canonical(trajs, out);
}

std::vector<Trajectory> read_canonical_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path.string());
  return read_canonical(in);
}

}  // namespace trajlab::dataio
