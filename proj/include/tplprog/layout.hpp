#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "tplprog/canvas.hpp"
#include "tplprog/grammar.hpp"
#include "tplprog/ir.hpp"

namespace tplprog {

inline constexpr int kLayoutSize = 64;
inline constexpr int kMaxInstances = 20;
inline constexpr double kPrimHalfExtent = 0.1;

enum LayoutColor : std::uint8_t { kEmpty = 0, kGrey = 1, kRed = 2, kGreen = 3, kBlue = 4 };
enum class Shape : std::uint8_t { Square, Circle, Triangle };

/// Apex direction of a triangle, counter-clockwise quarter turns from +x.
enum Apex : int { kApexRight = 0, kApexUp = 1, kApexLeft = 2, kApexDown = 3 };

struct PrimitiveInstance {
  Shape shape = Shape::Square;
  double cx = 0, cy = 0;  // canvas coordinates in [-1, 1]^2, y up
  double hx = kPrimHalfExtent, hy = kPrimHalfExtent;
  std::uint8_t color = kGrey;
  int apex = kApexUp;
  int node = -1;   // pre-order index of the emitting Prim in the program
  int order = 0;   // draw order
};

struct LayoutScene {
  Canvas canvas;
  std::vector<int> provenance;  // per cell, draw order of the topmost instance or -1
  std::vector<PrimitiveInstance> instances;
};

/// Full layout grammar and the two reduced grammars used for fast end-to-end
/// runs ("layout-toy": UNION/Color/Move/Prim) and exhaustive search checks
/// ("layout-tiny": Color over Prim with two values each).
Grammar layoutGrammar(GrammarOptions options = {});
Grammar layoutToyGrammar(GrammarOptions options = {});
Grammar layoutTinyGrammar(GrammarOptions options = {});

/// Executes any grammar whose function symbols are drawn from the layout
/// language. Throws SceneOverflow past kMaxInstances instances.
LayoutScene executeLayout(const Grammar& g, const Program& z);

/// Centre of cell `i` along either axis; rows run top to bottom.
double cellCenterX(int col);
double cellCenterY(int row);

bool insideShape(const PrimitiveInstance& p, double x, double y);
/// Euclidean distance from a point to the closed shape (0 inside).
double shapeDistance(const PrimitiveInstance& p, double x, double y);
void rasterize(const PrimitiveInstance& p, LayoutScene& scene);

double colorIoU(const Canvas& a, const Canvas& b);

/// Binary PPM (P6) with the fixed palette.
std::string encodePpm(const Canvas& c);

}  // namespace tplprog
