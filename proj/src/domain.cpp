#include "tplprog/domain.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "tplprog/errors.hpp"
#include "tplprog/layout.hpp"
#include "tplprog/stroke.hpp"

namespace tplprog {
namespace {

constexpr int kGrid = 4;  // patches per side

class LayoutDomain final : public Domain {
 public:
  explicit LayoutDomain(Grammar g) : Domain(std::move(g)) {
    for (int f = 0; f < grammar().functionCount(); ++f)
      if (grammar().function(f).symbol == "Prim") prim_.push_back(f);
  }

  std::string family() const override { return "layout"; }
  int canvasWidth() const override { return kLayoutSize; }
  int canvasHeight() const override { return kLayoutSize; }
  Canvas execute(const Program& z) const override { return executeLayout(grammar(), z).canvas; }
  double distance(const Canvas& a, const Canvas& b) const override { return 1.0 - colorIoU(a, b); }

  std::vector<double> features(const Canvas& c) const override {
    std::vector<double> f(static_cast<std::size_t>(kVisualTokens * kPatchFeatures), 0.0);
    const int p = c.width / kGrid;
    for (int pr = 0; pr < kGrid; ++pr)
      for (int pc = 0; pc < kGrid; ++pc) {
        double* out = &f[static_cast<std::size_t>((pr * kGrid + pc) * kPatchFeatures)];
        double n = 0, sx = 0, sy = 0;
        for (int r = pr * p; r < (pr + 1) * p; ++r)
          for (int col = pc * p; col < (pc + 1) * p; ++col) {
            const int v = c.at(r, col);
            if (!v) continue;
            out[v - 1] += 1.0;
            n += 1;
            sx += col - pc * p + 0.5;
            sy += r - pr * p + 0.5;
          }
        // Square-root coverage and doubled centroid offsets keep every feature
        // near unit scale, so the visual projection does not start starved.
        for (int k = 0; k < 4; ++k) out[k] = 2.0 * std::sqrt(out[k] / (p * p));
        if (n > 0) {
          out[4] = 2.0 * (sx / n / p - 0.5);
          out[5] = 2.0 * (sy / n / p - 0.5);
        }
      }
    return f;
  }

  bool partCreating(int fn) const override { return std::find(prim_.begin(), prim_.end(), fn) != prim_.end(); }

  std::vector<int> propagate(const Program& z, const std::vector<int>& node_part) const override {
    const LayoutScene scene = executeLayout(grammar(), z);
    std::vector<int> labels(static_cast<std::size_t>(kLayoutSize * kLayoutSize), -1);
    if (scene.instances.empty()) return labels;
    for (int r = 0; r < kLayoutSize; ++r)
      for (int c = 0; c < kLayoutSize; ++c) {
        const std::size_t i = static_cast<std::size_t>(r * kLayoutSize + c);
        int owner = scene.provenance[i];
        if (owner < 0) {
          // Nearest shape; equal distances go to the later-drawn instance.
          double best = std::numeric_limits<double>::infinity();
          for (const auto& inst : scene.instances) {
            const double d = shapeDistance(inst, cellCenterX(c), cellCenterY(r));
            if (d <= best) {
              best = d;
              owner = inst.order;
            }
          }
        }
        labels[i] = node_part.at(static_cast<std::size_t>(scene.instances[static_cast<std::size_t>(owner)].node));
      }
    return labels;
  }

  std::vector<std::uint8_t> dump(const Canvas& c) const override { return c.cells; }
  Canvas undump(const std::vector<std::uint8_t>& bytes) const override {
    Canvas c(kLayoutSize, kLayoutSize);
    if (bytes.size() != c.cells.size()) throw DataError("layout canvas dump has the wrong size");
    for (auto b : bytes)
      if (b > 4) throw DataError("layout canvas dump has an invalid cell value");
    c.cells = bytes;
    return c;
  }
  std::string encodeImage(const Canvas& c) const override { return encodePpm(c); }
  std::string imageExtension() const override { return "ppm"; }

 private:
  std::vector<int> prim_;
};

class StrokeDomain final : public Domain {
 public:
  explicit StrokeDomain(Grammar g) : Domain(std::move(g)) {
    for (int f = 0; f < grammar().functionCount(); ++f) {
      const auto& s = grammar().function(f).symbol;
      part_.push_back(s == "DRAW" || s == "EMPTY");
    }
  }

  std::string family() const override { return "stroke"; }
  int canvasWidth() const override { return kStrokeSize; }
  int canvasHeight() const override { return kStrokeSize; }
  Canvas execute(const Program& z) const override { return executeStroke(grammar(), z).canvas; }
  double distance(const Canvas& a, const Canvas& b) const override { return edgeChamfer(a, b); }

  std::vector<double> features(const Canvas& c) const override {
    std::vector<double> f(static_cast<std::size_t>(kVisualTokens * kPatchFeatures), 0.0);
    const int p = c.width / kGrid;
    for (int pr = 0; pr < kGrid; ++pr)
      for (int pc = 0; pc < kGrid; ++pc) {
        double* out = &f[static_cast<std::size_t>((pr * kGrid + pc) * kPatchFeatures)];
        std::vector<std::array<double, 2>> pts;
        for (int r = pr * p; r < (pr + 1) * p; ++r)
          for (int col = pc * p; col < (pc + 1) * p; ++col)
            if (c.at(r, col)) pts.push_back({(col - pc * p + 0.5) / p - 0.5, (r - pr * p + 0.5) / p - 0.5});
        if (pts.empty()) continue;
        const double n = static_cast<double>(pts.size());
        double mx = 0, my = 0;
        for (const auto& q : pts) mx += q[0], my += q[1];
        mx /= n;
        my /= n;
        double xx = 0, yy = 0, xy = 0;
        for (const auto& q : pts) {
          xx += (q[0] - mx) * (q[0] - mx);
          yy += (q[1] - my) * (q[1] - my);
          xy += (q[0] - mx) * (q[1] - my);
        }
        out[0] = 2.0 * std::sqrt(n / (p * p));
        out[1] = 2.0 * mx;
        out[2] = 2.0 * my;
        out[3] = 8.0 * xx / n;
        out[4] = 8.0 * yy / n;
        out[5] = 8.0 * xy / n;
      }
    return f;
  }

  bool partCreating(int fn) const override { return part_.at(static_cast<std::size_t>(fn)); }

  std::vector<int> propagate(const Program& z, const std::vector<int>& node_part) const override {
    constexpr int kSamplesPerPart = 200;
    const StrokeResult res = executeStroke(grammar(), z);
    std::vector<int> labels(static_cast<std::size_t>(kStrokeSize * kStrokeSize), -1);
    // Group stroke polylines by part, then sample each group evenly by arc length.
    std::vector<int> parts;
    for (const auto& s : res.strokes) {
      const int part = node_part.at(static_cast<std::size_t>(s.node));
      if (std::find(parts.begin(), parts.end(), part) == parts.end()) parts.push_back(part);
    }
    std::vector<Point> samples;
    std::vector<int> sample_part;
    for (int part : parts) {
      std::vector<std::pair<Point, Point>> segs;
      Point first{};
      bool have_first = false;
      double total = 0;
      for (const auto& s : res.strokes) {
        if (node_part.at(static_cast<std::size_t>(s.node)) != part) continue;
        if (!have_first) first = s.points.front(), have_first = true;
        for (std::size_t i = 1; i < s.points.size(); ++i) {
          segs.push_back({s.points[i - 1], s.points[i]});
          total += std::hypot(s.points[i][0] - s.points[i - 1][0], s.points[i][1] - s.points[i - 1][1]);
        }
      }
      for (int k = 0; k < kSamplesPerPart; ++k) {
        Point q = first;
        if (total > 0) {
          double target = total * k / (kSamplesPerPart - 1);
          for (const auto& [a, b] : segs) {
            const double len = std::hypot(b[0] - a[0], b[1] - a[1]);
            if (target <= len || &segs.back().first == &a) {
              const double f = len > 0 ? std::min(1.0, target / len) : 0.0;
              q = {a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])};
              break;
            }
            target -= len;
          }
        }
        samples.push_back(q);
        sample_part.push_back(part);
      }
    }
    if (samples.empty()) return labels;
    const double off = 0.25 / kStrokeSize;
    const std::array<std::array<double, 2>, 5> offsets{{{0, 0}, {-off, -off}, {off, -off}, {-off, off}, {off, off}}};
    for (int r = 0; r < kStrokeSize; ++r)
      for (int c = 0; c < kStrokeSize; ++c) {
        if (!res.canvas.at(r, c)) continue;
        const double cx = (c + 0.5) / kStrokeSize, cy = 1.0 - (r + 0.5) / kStrokeSize;
        std::vector<int> votes;
        for (const auto& o : offsets) votes.push_back(knnVote(samples, sample_part, {cx + o[0], cy + o[1]}));
        labels[static_cast<std::size_t>(r * kStrokeSize + c)] = majority(votes);
      }
    return labels;
  }

  std::vector<std::uint8_t> dump(const Canvas& c) const override { return packBits(c); }
  Canvas undump(const std::vector<std::uint8_t>& bytes) const override { return unpackBits(bytes, kStrokeSize, kStrokeSize); }
  std::string encodeImage(const Canvas& c) const override { return encodePgm(c); }
  std::string imageExtension() const override { return "pgm"; }

 private:
  // Majority of the votes; ties go to the label voted first.
  static int majority(const std::vector<int>& votes) {
    int best = votes.front(), best_count = 0;
    for (int v : votes) {
      const int n = static_cast<int>(std::count(votes.begin(), votes.end(), v));
      if (n > best_count) best = v, best_count = n;
    }
    return best;
  }

  static int knnVote(const std::vector<Point>& samples, const std::vector<int>& part, Point q) {
    std::array<std::pair<double, int>, 3> nn;
    nn.fill({std::numeric_limits<double>::infinity(), -1});
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const double d = (samples[i][0] - q[0]) * (samples[i][0] - q[0]) + (samples[i][1] - q[1]) * (samples[i][1] - q[1]);
      if (d >= nn[2].first) continue;
      nn[2] = {d, static_cast<int>(i)};
      std::sort(nn.begin(), nn.end());
    }
    std::vector<int> votes;
    for (const auto& [d, i] : nn)
      if (i >= 0) votes.push_back(part[static_cast<std::size_t>(i)]);
    return majority(votes);
  }

  std::vector<bool> part_;
};

}  // namespace

DomainPtr makeDomain(std::string_view id, GrammarOptions options) {
  if (id == "layout") return std::make_shared<LayoutDomain>(layoutGrammar(options));
  if (id == "layout-toy") return std::make_shared<LayoutDomain>(layoutToyGrammar(options));
  if (id == "layout-tiny") return std::make_shared<LayoutDomain>(layoutTinyGrammar(options));
  if (id == "stroke") return std::make_shared<StrokeDomain>(strokeGrammar(options));
  throw DataError("unknown domain '" + std::string(id) + "'");
}

std::vector<std::string> domainIds() { return {"layout", "stroke", "layout-toy", "layout-tiny"}; }

}  // namespace tplprog
