#pragma once

#include <array>
#include <string>
#include <vector>

#include "tplprog/canvas.hpp"
#include "tplprog/grammar.hpp"
#include "tplprog/ir.hpp"

namespace tplprog {

inline constexpr int kStrokeSize = 28;

using Point = std::array<double, 2>;

/// One inked ON block: its trajectory (a single point for a dot) and the
/// pre-order index of the DRAW/EMPTY node that produced it.
struct StrokeRecord {
  std::vector<Point> points;
  int node = -1;
};

struct StrokeResult {
  Canvas canvas;
  std::vector<StrokeRecord> strokes;
  /// Set when the pen left the unit square and was clamped back in.
  bool clamped = false;
};

Grammar strokeGrammar(GrammarOptions options = {});

StrokeResult executeStroke(const Grammar& g, const Program& z);

/// Cell containing a point of the unit square (y up, row 0 at the top).
int strokeCol(double x);
int strokeRow(double y);

/// Sets every cell the closed segment p0-p1 passes through.
void inkSegment(Canvas& c, Point p0, Point p1);

/// Point at arc-length fraction t of a polyline.
Point pointAlong(const std::vector<Point>& poly, double t);

/// Symmetric mean nearest-neighbour distance between on-cell centres,
/// normalised by the canvas diagonal. `boundary` restricts both sets to
/// on-cells with an off 4-neighbour.
double edgeChamfer(const Canvas& a, const Canvas& b, bool boundary = false);

/// Binary PGM (P5), ink black on white.
std::string encodePgm(const Canvas& c);
std::vector<std::uint8_t> packBits(const Canvas& c);
Canvas unpackBits(const std::vector<std::uint8_t>& bytes, int width, int height);

/// Reads a PGM/PPM (P2, P3, P5, P6) image, marks pixels darker than
/// `threshold` (fraction of max intensity) as ink and nearest-resizes to
/// 28x28.
Canvas ingestImage(const std::string& path, double threshold = 0.5);

}  // namespace tplprog
