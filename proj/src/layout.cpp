#include "tplprog/layout.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>

#include "tplprog/errors.hpp"

namespace tplprog {
namespace {

constexpr double kEps = 1e-9;

int typeOf(const std::vector<ParamType>& types, const std::string& name) {
  for (std::size_t i = 0; i < types.size(); ++i)
    if (types[i].name == name) return static_cast<int>(i);
  throw TypeError("grammar: no parameter type " + name);
}

FunctionSig sig(const std::vector<ParamType>& types, std::string symbol, int category, std::vector<std::string> params,
                std::vector<int> children) {
  FunctionSig s;
  s.symbol = std::move(symbol);
  s.category = category;
  for (const auto& p : params) s.param_types.push_back(typeOf(types, p));
  s.param_names = std::move(params);
  s.child_categories = std::move(children);
  return s;
}

std::vector<ParamType> layoutTypes() {
  return {
      categoricalType("axis", {"X", "Y"}),
      categoricalType("ctype", {"red", "green", "blue"}),
      categoricalType("ptype", {"square", "circle", "triangle"}),
      numericType("n", 1, 6, 1.0, 0.0, false, 1.0),
      numericType("xt", -3, 3, 0.25, 0.0, false, 0.0),
      numericType("xf", -2, 3, 0.05, -0.025, true, 0.0),
      numericType("yt", -3, 3, 0.25, 0.0, false, 0.0),
      numericType("yf", -2, 3, 0.05, -0.025, true, 0.0),
      numericType("wt", 1, 6, 0.35, -0.15, false, 0.9),
      numericType("wf", -3, 3, 0.05, 0.0, true, 0.1),
      numericType("ht", 1, 6, 0.35, -0.15, false, 0.9),
      numericType("hf", -3, 3, 0.05, 0.0, true, 0.1),
  };
}

enum class Op { Union, Reflect, Rotate, Translate, Color, Move, Scale, Prim };

Op opOf(const std::string& symbol) {
  if (symbol == "UNION") return Op::Union;
  if (symbol == "SymReflect") return Op::Reflect;
  if (symbol == "SymRotate") return Op::Rotate;
  if (symbol == "SymTranslate") return Op::Translate;
  if (symbol == "Color") return Op::Color;
  if (symbol == "Move") return Op::Move;
  if (symbol == "Scale") return Op::Scale;
  if (symbol == "Prim") return Op::Prim;
  throw TypeError("layout executor: unknown function " + symbol);
}

// cos/sin in degrees, exact on multiples of 90.
double cosd(double deg) {
  const double q = deg / 90.0;
  if (q == std::floor(q)) {
    static constexpr double kCos[4] = {1, 0, -1, 0};
    return kCos[((static_cast<long>(q) % 4) + 4) % 4];
  }
  return std::cos(deg * M_PI / 180.0);
}
double sind(double deg) { return cosd(deg - 90.0); }

struct Exec {
  const Grammar& g;
  int next_node = 0;

  double num(const Expr& e, int i) const {
    const auto& sig = g.function(e.fn);
    return g.paramType(sig.param_types[static_cast<std::size_t>(i)]).values[static_cast<std::size_t>(e.args[static_cast<std::size_t>(i)].index)];
  }
  const std::string& label(const Expr& e, int i) const {
    const auto& sig = g.function(e.fn);
    return g.paramType(sig.param_types[static_cast<std::size_t>(i)]).labels[static_cast<std::size_t>(e.args[static_cast<std::size_t>(i)].index)];
  }
  double named(const Expr& e, const char* name) const {
    const auto& sig = g.function(e.fn);
    for (int i = 0; i < sig.paramCount(); ++i)
      if (sig.param_names[static_cast<std::size_t>(i)] == name) return num(e, i);
    throw TypeError("layout executor: missing parameter " + std::string(name));
  }

  static void check(const std::vector<PrimitiveInstance>& s) {
    if (static_cast<int>(s.size()) > kMaxInstances)
      throw SceneOverflow("scene has " + std::to_string(s.size()) + " primitives, limit is " + std::to_string(kMaxInstances));
  }

  std::vector<PrimitiveInstance> run(const Expr& e) {
    if (e.isHole()) throw ExecError("cannot execute a hole");
    const int node = next_node++;
    const auto& sig = g.function(e.fn);
    const Op op = opOf(sig.symbol);
    std::vector<PrimitiveInstance> out;
    if (op == Op::Prim) {
      PrimitiveInstance p;
      const std::string& l = label(e, 0);
      p.shape = l == "square" ? Shape::Square : l == "circle" ? Shape::Circle : Shape::Triangle;
      p.node = node;
      out.push_back(p);
      return out;
    }
    out = run(e.children[0]);
    switch (op) {
      case Op::Union: {
        auto rhs = run(e.children[1]);
        out.insert(out.end(), rhs.begin(), rhs.end());
        break;
      }
      case Op::Color: {
        const std::string& l = label(e, 0);
        const std::uint8_t c = l == "red" ? kRed : l == "green" ? kGreen : kBlue;
        for (auto& p : out) p.color = c;
        break;
      }
      case Op::Move: {
        const double dx = named(e, "xt") + named(e, "xf");
        const double dy = named(e, "yt") + named(e, "yf");
        for (auto& p : out) {
          p.cx += dx;
          p.cy += dy;
        }
        break;
      }
      case Op::Scale: {
        const double sx = named(e, "wt") + named(e, "wf");
        const double sy = named(e, "ht") + named(e, "hf");
        for (auto& p : out) {
          p.cx *= sx;
          p.cy *= sy;
          p.hx *= sx;
          p.hy *= sy;
        }
        break;
      }
      case Op::Reflect: {
        const bool x_axis = label(e, 0) == "X";
        const std::size_t n = out.size();
        for (std::size_t i = 0; i < n; ++i) {
          PrimitiveInstance p = out[i];
          if (x_axis) {
            p.cx = -p.cx;
            if (p.apex == kApexLeft || p.apex == kApexRight) p.apex = (p.apex + 2) % 4;
          } else {
            p.cy = -p.cy;
            if (p.apex == kApexUp || p.apex == kApexDown) p.apex = (p.apex + 2) % 4;
          }
          out.push_back(p);
        }
        break;
      }
      case Op::Rotate: {
        const int n = static_cast<int>(std::lround(named(e, "n")));
        const std::vector<PrimitiveInstance> base = out;
        for (int k = 1; k < n; ++k) {
          const double deg = 360.0 * k / n;
          const double c = cosd(deg), s = sind(deg);
          for (PrimitiveInstance p : base) {
            const double cx = c * p.cx - s * p.cy, cy = s * p.cx + c * p.cy;
            double hx, hy;
            if (p.shape == Shape::Circle) {
              hx = std::sqrt(c * c * p.hx * p.hx + s * s * p.hy * p.hy);
              hy = std::sqrt(s * s * p.hx * p.hx + c * c * p.hy * p.hy);
            } else {
              hx = std::abs(c) * p.hx + std::abs(s) * p.hy;
              hy = std::abs(s) * p.hx + std::abs(c) * p.hy;
            }
            p.cx = cx;
            p.cy = cy;
            p.hx = hx;
            p.hy = hy;
            const double turns = std::round((90.0 * p.apex + deg) / 90.0);
            p.apex = ((static_cast<int>(turns) % 4) + 4) % 4;
            out.push_back(p);
          }
          check(out);
        }
        break;
      }
      case Op::Translate: {
        const int n = static_cast<int>(std::lround(named(e, "n")));
        const double dx = named(e, "xt") + named(e, "xf");
        const double dy = named(e, "yt") + named(e, "yf");
        const std::vector<PrimitiveInstance> base = out;
        for (int k = 1; k < n; ++k) {
          for (PrimitiveInstance p : base) {
            p.cx += k * dx;
            p.cy += k * dy;
            out.push_back(p);
          }
          check(out);
        }
        break;
      }
      case Op::Prim: break;
    }
    check(out);
    return out;
  }
};

// Triangle in local frame: u runs base (-1) to apex (+1), v across.
void triangleLocal(const PrimitiveInstance& p, double x, double y, double& u, double& v) {
  const double dx = (x - p.cx) / p.hx, dy = (y - p.cy) / p.hy;
  switch (p.apex) {
    case kApexUp: u = dy, v = dx; break;
    case kApexDown: u = -dy, v = dx; break;
    case kApexRight: u = dx, v = dy; break;
    default: u = -dx, v = dy; break;
  }
}

std::vector<std::array<double, 2>> outline(const PrimitiveInstance& p) {
  std::vector<std::array<double, 2>> pts;
  switch (p.shape) {
    case Shape::Square:
      pts = {{p.cx - p.hx, p.cy - p.hy}, {p.cx + p.hx, p.cy - p.hy}, {p.cx + p.hx, p.cy + p.hy}, {p.cx - p.hx, p.cy + p.hy}};
      break;
    case Shape::Circle:
      for (int i = 0; i < 256; ++i) {
        const double t = 2.0 * M_PI * i / 256;
        pts.push_back({p.cx + p.hx * std::cos(t), p.cy + p.hy * std::sin(t)});
      }
      break;
    case Shape::Triangle: {
      const double ax[4] = {1, 0, -1, 0}, ay[4] = {0, 1, 0, -1};
      const double ux = ax[p.apex], uy = ay[p.apex];  // apex direction
      const double vx = -uy, vy = ux;
      pts = {{p.cx + ux * p.hx, p.cy + uy * p.hy},
             {p.cx - ux * p.hx + vx * p.hx, p.cy - uy * p.hy + vy * p.hy},
             {p.cx - ux * p.hx - vx * p.hx, p.cy - uy * p.hy - vy * p.hy}};
      break;
    }
  }
  return pts;
}

double segmentDistance(double px, double py, const std::array<double, 2>& a, const std::array<double, 2>& b) {
  const double dx = b[0] - a[0], dy = b[1] - a[1];
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((px - a[0]) * dx + (py - a[1]) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(px - (a[0] + t * dx), py - (a[1] + t * dy));
}

Grammar buildLayout(std::string id, const std::vector<std::string>& symbols, GrammarOptions options) {
  auto types = layoutTypes();
  std::vector<FunctionSig> fns;
  for (const auto& s : symbols) {
    if (s == "UNION") fns.push_back(sig(types, s, 0, {}, {0, 0}));
    if (s == "SymReflect") fns.push_back(sig(types, s, 0, {"axis"}, {0}));
    if (s == "SymRotate") fns.push_back(sig(types, s, 0, {"n"}, {0}));
    if (s == "SymTranslate") fns.push_back(sig(types, s, 0, {"n", "xt", "xf", "yt", "yf"}, {0}));
    if (s == "Color") fns.push_back(sig(types, s, 0, {"ctype"}, {0}));
    if (s == "Move") fns.push_back(sig(types, s, 0, {"xt", "xf", "yt", "yf"}, {0}));
    if (s == "Scale") fns.push_back(sig(types, s, 0, {"wt", "wf", "ht", "hf"}, {0}));
    if (s == "Prim") fns.push_back(sig(types, s, 0, {"ptype"}, {}));
  }
  return Grammar(std::move(id), {"Shape"}, 0, std::move(types), std::move(fns), SequenceCaps{64, 16, 72, 160}, options);
}

}  // namespace

Grammar layoutGrammar(GrammarOptions options) {
  return buildLayout("layout", {"UNION", "SymReflect", "SymRotate", "SymTranslate", "Color", "Move", "Scale", "Prim"}, options);
}

Grammar layoutToyGrammar(GrammarOptions options) {
  return buildLayout("layout-toy", {"UNION", "Color", "Move", "Prim"}, options);
}

Grammar layoutTinyGrammar(GrammarOptions options) {
  std::vector<ParamType> types{categoricalType("ctype", {"red", "green"}), categoricalType("ptype", {"square", "circle"})};
  std::vector<FunctionSig> fns{sig(types, "Color", 0, {"ctype"}, {1}), sig(types, "Prim", 1, {"ptype"}, {})};
  return Grammar("layout-tiny", {"Shape", "Prim"}, 0, std::move(types), std::move(fns), SequenceCaps{64, 16, 72, 160}, options);
}

double cellCenterX(int col) { return -1.0 + (col + 0.5) * (2.0 / kLayoutSize); }
double cellCenterY(int row) { return 1.0 - (row + 0.5) * (2.0 / kLayoutSize); }

bool insideShape(const PrimitiveInstance& p, double x, double y) {
  switch (p.shape) {
    case Shape::Square: return std::abs(x - p.cx) <= p.hx + kEps && std::abs(y - p.cy) <= p.hy + kEps;
    case Shape::Circle: {
      const double dx = (x - p.cx) / p.hx, dy = (y - p.cy) / p.hy;
      return dx * dx + dy * dy <= 1.0 + kEps;
    }
    case Shape::Triangle: {
      double u, v;
      triangleLocal(p, x, y, u, v);
      return u >= -1.0 - kEps && std::abs(v) <= (1.0 - u) / 2.0 + kEps;
    }
  }
  return false;
}

double shapeDistance(const PrimitiveInstance& p, double x, double y) {
  if (insideShape(p, x, y)) return 0.0;
  if (p.shape == Shape::Square) {
    const double dx = std::max(std::abs(x - p.cx) - p.hx, 0.0), dy = std::max(std::abs(y - p.cy) - p.hy, 0.0);
    return std::hypot(dx, dy);
  }
  if (p.shape == Shape::Circle && p.hx == p.hy) return std::max(0.0, std::hypot(x - p.cx, y - p.cy) - p.hx);
  const auto pts = outline(p);
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < pts.size(); ++i) best = std::min(best, segmentDistance(x, y, pts[i], pts[(i + 1) % pts.size()]));
  return best;
}

void rasterize(const PrimitiveInstance& p, LayoutScene& scene) {
  const double cell = 2.0 / kLayoutSize;
  const int c0 = std::max(0, static_cast<int>(std::floor((p.cx - p.hx + 1.0) / cell)) - 1);
  const int c1 = std::min(kLayoutSize - 1, static_cast<int>(std::ceil((p.cx + p.hx + 1.0) / cell)) + 1);
  const int r0 = std::max(0, static_cast<int>(std::floor((1.0 - p.cy - p.hy) / cell)) - 1);
  const int r1 = std::min(kLayoutSize - 1, static_cast<int>(std::ceil((1.0 - p.cy + p.hy) / cell)) + 1);
  for (int r = r0; r <= r1; ++r)
    for (int c = c0; c <= c1; ++c)
      if (insideShape(p, cellCenterX(c), cellCenterY(r))) {
        scene.canvas.at(r, c) = p.color;
        scene.provenance[static_cast<std::size_t>(r * kLayoutSize + c)] = p.order;
      }
}

LayoutScene executeLayout(const Grammar& g, const Program& z) {
  Exec ex{g};
  LayoutScene scene;
  scene.instances = ex.run(z.root());
  scene.canvas = Canvas(kLayoutSize, kLayoutSize);
  scene.provenance.assign(static_cast<std::size_t>(kLayoutSize * kLayoutSize), -1);
  for (std::size_t i = 0; i < scene.instances.size(); ++i) {
    scene.instances[i].order = static_cast<int>(i);
    rasterize(scene.instances[i], scene);
  }
  return scene;
}

double colorIoU(const Canvas& a, const Canvas& b) {
  if (a.width != b.width || a.height != b.height) throw DataError("colorIoU: canvas dimensions differ");
  long inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.cells.size(); ++i) {
    const bool oa = a.cells[i] != 0, ob = b.cells[i] != 0;
    uni += oa || ob;
    inter += oa && ob && a.cells[i] == b.cells[i];
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::string encodePpm(const Canvas& c) {
  static constexpr std::uint8_t kPalette[5][3] = {
      {0xFF, 0xFF, 0xFF}, {0x80, 0x80, 0x80}, {0xE0, 0x30, 0x30}, {0x30, 0xB0, 0x30}, {0x30, 0x50, 0xE0}};
  std::string out = "P6\n" + std::to_string(c.width) + " " + std::to_string(c.height) + "\n255\n";
  for (auto v : c.cells) {
    const auto& rgb = kPalette[std::min<int>(v, 4)];
    out.append(reinterpret_cast<const char*>(rgb), 3);
  }
  return out;
}

}  // namespace tplprog
