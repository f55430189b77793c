#include "tplprog/stroke.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "tplprog/errors.hpp"
#include "tplprog/util.hpp"

namespace tplprog {
namespace {

constexpr double kMaxBowDegrees = 80.0;
constexpr double kFlattenStep = 0.25;  // pixels

double cosd(double deg) {
  const double q = deg / 90.0;
  if (q == std::floor(q)) {
    static constexpr double kCos[4] = {1, 0, -1, 0};
    return kCos[((static_cast<long>(q) % 4) + 4) % 4];
  }
  return std::cos(deg * M_PI / 180.0);
}
double sind(double deg) { return cosd(deg - 90.0); }

int typeOf(const std::vector<ParamType>& types, const std::string& name) {
  for (std::size_t i = 0; i < types.size(); ++i)
    if (types[i].name == name) return static_cast<int>(i);
  throw TypeError("grammar: no parameter type " + name);
}

enum Category { kG = 0, kS = 1, kStrokeCat = 2 };

struct Exec {
  const Grammar& g;
  StrokeResult& out;
  Point pos{0.5, 0.5};
  int next_node = 0;

  double named(const Expr& e, const char* name) const {
    const auto& sig = g.function(e.fn);
    for (int i = 0; i < sig.paramCount(); ++i)
      if (sig.param_names[static_cast<std::size_t>(i)] == name)
        return g.paramType(sig.param_types[static_cast<std::size_t>(i)]).values[static_cast<std::size_t>(e.args[static_cast<std::size_t>(i)].index)];
    throw TypeError("stroke executor: missing parameter " + std::string(name));
  }

  static Point clampPoint(Point p) { return {std::clamp(p[0], 0.0, 1.0), std::clamp(p[1], 0.0, 1.0)}; }

  // Pointwise projection of a path onto the unit square. Each segment is
  // split where a coordinate crosses 0 or 1, so the projection of every piece
  // is again a straight segment.
  std::vector<Point> clampPath(const std::vector<Point>& raw) {
    std::vector<Point> res{clampPoint(raw.front())};
    for (std::size_t i = 1; i < raw.size(); ++i) {
      const Point a = raw[i - 1], b = raw[i];
      std::vector<double> ts;
      for (int d = 0; d < 2; ++d)
        for (double bound : {0.0, 1.0}) {
          const double den = b[static_cast<std::size_t>(d)] - a[static_cast<std::size_t>(d)];
          if (den == 0.0) continue;
          const double t = (bound - a[static_cast<std::size_t>(d)]) / den;
          if (t > 0.0 && t < 1.0) ts.push_back(t);
        }
      std::sort(ts.begin(), ts.end());
      for (double t : ts) res.push_back(clampPoint({a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])}));
      res.push_back(clampPoint(b));
    }
    for (const auto& p : raw)
      if (p[0] < 0.0 || p[0] > 1.0 || p[1] < 0.0 || p[1] > 1.0) out.clamped = true;
    return res;
  }

  void runG(const Expr& e) {
    const int node = next_node++;
    (void)node;
    const auto& sig = g.function(e.fn);
    if (sig.symbol == "END") return;
    if (sig.symbol == "ON" || sig.symbol == "OFF") {
      runS(e.children[0], sig.symbol == "ON");
      runG(e.children[1]);
      return;
    }
    if (sig.symbol == "MOVE") {
      const int si = static_cast<int>(std::lround(named(e, "si")));
      if (si < 0 || si >= static_cast<int>(out.strokes.size()))
        throw InvalidReference("MOVE refers to stroke " + std::to_string(si) + " but only " +
                               std::to_string(out.strokes.size()) + " strokes exist");
      const double t = std::clamp(named(e, "mt") + named(e, "mf"), 0.0, 1.0);
      pos = pointAlong(out.strokes[static_cast<std::size_t>(si)].points, t);
      runG(e.children[0]);
      return;
    }
    throw TypeError("stroke executor: unexpected " + sig.symbol);
  }

  void runS(const Expr& e, bool ink) {
    const int node = next_node++;
    const auto& sig = g.function(e.fn);
    if (sig.symbol == "EMPTY") {
      if (ink) {
        out.canvas.at(strokeRow(pos[1]), strokeCol(pos[0])) = 1;
        out.strokes.push_back({{pos}, node});
      }
      return;
    }
    double bow = 0.0;
    const Expr* draw = &e;
    int draw_node = node;
    if (sig.symbol == "BOW") {
      bow = std::clamp(named(e, "bt") + named(e, "bf"), -kMaxBowDegrees, kMaxBowDegrees);
      draw = &e.children[0];
      draw_node = next_node++;
    }
    const double angle = named(*draw, "at") + named(*draw, "af");
    const double dist = named(*draw, "dt") + named(*draw, "df");
    const Point p0 = pos;
    const Point p1{p0[0] + dist * cosd(angle), p0[1] + dist * sind(angle)};
    std::vector<Point> raw{p0};
    if (bow != 0.0) {
      const double k = 0.5 * std::tan(bow * M_PI / 360.0);
      const double cx = p1[0] - p0[0], cy = p1[1] - p0[1];
      const Point ctrl{(p0[0] + p1[0]) / 2 - k * cy, (p0[1] + p1[1]) / 2 + k * cx};
      const double len = (std::hypot(ctrl[0] - p0[0], ctrl[1] - p0[1]) + std::hypot(p1[0] - ctrl[0], p1[1] - ctrl[1])) * kStrokeSize;
      const int n = std::max(1, static_cast<int>(std::ceil(len / kFlattenStep)));
      for (int i = 1; i < n; ++i) {
        const double t = static_cast<double>(i) / n, s = 1.0 - t;
        raw.push_back({s * s * p0[0] + 2 * s * t * ctrl[0] + t * t * p1[0], s * s * p0[1] + 2 * s * t * ctrl[1] + t * t * p1[1]});
      }
    }
    raw.push_back(p1);
    std::vector<Point> path = clampPath(raw);
    pos = path.back();
    if (!ink) return;
    for (std::size_t i = 1; i < path.size(); ++i) inkSegment(out.canvas, path[i - 1], path[i]);
    out.strokes.push_back({std::move(path), draw_node});
  }
};

}  // namespace

Grammar strokeGrammar(GrammarOptions options) {
  std::vector<ParamType> types{
      numericType("si", 0, 12, 1.0, 0.0, false, 0.0),  numericType("mt", 0, 4, 0.25, 0.0, false, 0.0),
      numericType("mf", -1, 1, 1.0 / 12, 0.0, true, 0.0), numericType("at", 0, 8, 45.0, 0.0, false, 0.0),
      numericType("af", -2, 2, 9.0, 0.0, true, 0.0),     numericType("dt", 0, 8, 0.125, 0.0, false, 0.0),
      numericType("df", -2, 2, 0.025, 0.0, true, 0.0),   numericType("bt", -2, 2, 90.0, 0.0, false, 0.0),
      numericType("bf", -1, 1, 30.0, 0.0, true, 0.0),
  };
  auto fn = [&](std::string symbol, int category, std::vector<std::string> params, std::vector<int> children) {
    FunctionSig s;
    s.symbol = std::move(symbol);
    s.category = category;
    for (const auto& p : params) s.param_types.push_back(typeOf(types, p));
    s.param_names = std::move(params);
    s.child_categories = std::move(children);
    return s;
  };
  std::vector<FunctionSig> fns{
      fn("ON", kG, {}, {kS, kG}),
      fn("OFF", kG, {}, {kS, kG}),
      fn("MOVE", kG, {"si", "mt", "mf"}, {kG}),
      fn("END", kG, {}, {}),
      fn("DRAW", kS, {"at", "af", "dt", "df"}, {}),
      fn("BOW", kS, {"bt", "bf"}, {kStrokeCat}),
      fn("EMPTY", kS, {}, {}),
      fn("DRAW", kStrokeCat, {"at", "af", "dt", "df"}, {}),
  };
  // The stroke index of MOVE ranges over strokes recorded so far, one per ON.
  fns[2].counts_function = {0, -1, -1};
  return Grammar("stroke", {"G", "S", "Stroke"}, kG, std::move(types), std::move(fns), SequenceCaps{64, 16, 64, 160}, options);
}

int strokeCol(double x) { return std::clamp(static_cast<int>(std::floor(x * kStrokeSize)), 0, kStrokeSize - 1); }
int strokeRow(double y) { return std::clamp(static_cast<int>(std::floor((1.0 - y) * kStrokeSize)), 0, kStrokeSize - 1); }

void inkSegment(Canvas& c, Point p0, Point p1) {
  const double u0 = p0[0] * kStrokeSize, u1 = p1[0] * kStrokeSize;
  const double v0 = (1.0 - p0[1]) * kStrokeSize, v1 = (1.0 - p1[1]) * kStrokeSize;
  std::vector<double> ts{0.0, 1.0};
  auto crossings = [&](double a, double b) {
    if (a == b) return;
    const double lo = std::min(a, b), hi = std::max(a, b);
    for (double k = std::floor(lo) + 1; k < hi; k += 1.0) ts.push_back((k - a) / (b - a));
  };
  crossings(u0, u1);
  crossings(v0, v1);
  std::sort(ts.begin(), ts.end());
  auto mark = [&](double t) {
    const double x = p0[0] + t * (p1[0] - p0[0]), y = p0[1] + t * (p1[1] - p0[1]);
    c.at(strokeRow(y), strokeCol(x)) = 1;
  };
  for (std::size_t i = 0; i < ts.size(); ++i) {
    mark(ts[i]);
    if (i + 1 < ts.size() && ts[i + 1] > ts[i]) mark(0.5 * (ts[i] + ts[i + 1]));
  }
}

Point pointAlong(const std::vector<Point>& poly, double t) {
  if (poly.empty()) throw ExecError("empty stroke");
  if (poly.size() == 1) return poly.front();
  double total = 0.0;
  for (std::size_t i = 1; i < poly.size(); ++i) total += std::hypot(poly[i][0] - poly[i - 1][0], poly[i][1] - poly[i - 1][1]);
  if (total <= 0.0) return poly.front();
  double target = std::clamp(t, 0.0, 1.0) * total;
  for (std::size_t i = 1; i < poly.size(); ++i) {
    const double seg = std::hypot(poly[i][0] - poly[i - 1][0], poly[i][1] - poly[i - 1][1]);
    if (target <= seg && seg > 0.0) {
      const double f = target / seg;
      return {poly[i - 1][0] + f * (poly[i][0] - poly[i - 1][0]), poly[i - 1][1] + f * (poly[i][1] - poly[i - 1][1])};
    }
    target -= seg;
  }
  return poly.back();
}

StrokeResult executeStroke(const Grammar& g, const Program& z) {
  StrokeResult res;
  res.canvas = Canvas(kStrokeSize, kStrokeSize);
  Exec ex{g, res};
  ex.runG(z.root());
  return res;
}

namespace {

std::vector<std::array<int, 2>> chamferPoints(const Canvas& c, bool boundary) {
  std::vector<std::array<int, 2>> pts;
  auto on = [&](int r, int col) { return r >= 0 && r < c.height && col >= 0 && col < c.width && c.at(r, col) != 0; };
  for (int r = 0; r < c.height; ++r)
    for (int col = 0; col < c.width; ++col) {
      if (!on(r, col)) continue;
      if (boundary && on(r - 1, col) && on(r + 1, col) && on(r, col - 1) && on(r, col + 1)) continue;
      pts.push_back({r, col});
    }
  return pts;
}

double meanNearest(const std::vector<std::array<int, 2>>& from, const std::vector<std::array<int, 2>>& to) {
  double sum = 0.0;
  for (const auto& p : from) {
    int best = std::numeric_limits<int>::max();
    for (const auto& q : to) {
      const int dr = p[0] - q[0], dc = p[1] - q[1];
      best = std::min(best, dr * dr + dc * dc);
    }
    sum += std::sqrt(static_cast<double>(best));
  }
  return sum / static_cast<double>(from.size());
}

}  // namespace

double edgeChamfer(const Canvas& a, const Canvas& b, bool boundary) {
  if (a.width != b.width || a.height != b.height) throw DataError("edgeChamfer: canvas dimensions differ");
  const auto pa = chamferPoints(a, boundary), pb = chamferPoints(b, boundary);
  if (pa.empty() && pb.empty()) return 0.0;
  if (pa.empty() || pb.empty()) return 1.0;
  const double diag = std::hypot(a.width - 1, a.height - 1);
  return 0.5 * (meanNearest(pa, pb) + meanNearest(pb, pa)) / diag;
}

std::string encodePgm(const Canvas& c) {
  std::string out = "P5\n" + std::to_string(c.width) + " " + std::to_string(c.height) + "\n255\n";
  for (auto v : c.cells) out.push_back(v ? static_cast<char>(0) : static_cast<char>(255));
  return out;
}

std::vector<std::uint8_t> packBits(const Canvas& c) {
  std::vector<std::uint8_t> out(static_cast<std::size_t>((c.size() + 7) / 8), 0);
  for (int i = 0; i < c.size(); ++i)
    if (c.cells[static_cast<std::size_t>(i)]) out[static_cast<std::size_t>(i / 8)] |= static_cast<std::uint8_t>(0x80 >> (i % 8));
  return out;
}

Canvas unpackBits(const std::vector<std::uint8_t>& bytes, int width, int height) {
  Canvas c(width, height);
  if (bytes.size() != static_cast<std::size_t>((c.size() + 7) / 8)) throw DataError("packed canvas has the wrong size");
  for (int i = 0; i < c.size(); ++i) c.cells[static_cast<std::size_t>(i)] = (bytes[static_cast<std::size_t>(i / 8)] >> (7 - i % 8)) & 1;
  return c;
}

Canvas ingestImage(const std::string& path, double threshold) {
  const std::string data = readFile(path);
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < data.size()) {
      if (data[pos] == '#') {
        while (pos < data.size() && data[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(data[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    const std::size_t begin = pos;
    while (pos < data.size() && !std::isspace(static_cast<unsigned char>(data[pos])) && data[pos] != '#') ++pos;
    if (begin == pos) throw DataError(path + ": truncated image header");
    return data.substr(begin, pos - begin);
  };
  const std::string magic = token();
  if (magic != "P2" && magic != "P3" && magic != "P5" && magic != "P6") throw DataError(path + ": unsupported image format " + magic);
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(token());
    h = std::stoi(token());
    maxval = std::stoi(token());
  } catch (const std::exception&) {
    throw DataError(path + ": malformed image header");
  }
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) throw DataError(path + ": unsupported image dimensions");
  const int channels = (magic == "P3" || magic == "P6") ? 3 : 1;
  std::vector<double> intensity(static_cast<std::size_t>(w * h));
  if (magic == "P5" || magic == "P6") {
    ++pos;  // single whitespace after maxval
    if (data.size() < pos + static_cast<std::size_t>(w * h * channels)) throw DataError(path + ": truncated pixel data");
    for (int i = 0; i < w * h; ++i) {
      double s = 0;
      for (int k = 0; k < channels; ++k) s += static_cast<unsigned char>(data[pos + static_cast<std::size_t>(i * channels + k)]);
      intensity[static_cast<std::size_t>(i)] = s / channels / maxval;
    }
  } else {
    for (int i = 0; i < w * h; ++i) {
      double s = 0;
      for (int k = 0; k < channels; ++k) s += std::stoi(token());
      intensity[static_cast<std::size_t>(i)] = s / channels / maxval;
    }
  }
  Canvas c(kStrokeSize, kStrokeSize);
  for (int r = 0; r < kStrokeSize; ++r)
    for (int col = 0; col < kStrokeSize; ++col) {
      const int sr = std::min(h - 1, static_cast<int>((r + 0.5) * h / kStrokeSize));
      const int sc = std::min(w - 1, static_cast<int>((col + 0.5) * w / kStrokeSize));
      c.at(r, col) = intensity[static_cast<std::size_t>(sr * w + sc)] < threshold ? 1 : 0;
    }
  return c;
}

}  // namespace tplprog
