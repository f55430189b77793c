#pragma once

#include <cstdint>
#include <vector>

namespace tplprog {

/// Row-major symbolic grid. Layout cells hold 0..4 (empty, grey, red, green,
/// blue); stroke cells hold 0/1.
struct Canvas {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> cells;

  Canvas() = default;
  Canvas(int w, int h) : width(w), height(h), cells(static_cast<std::size_t>(w * h), 0) {}

  std::uint8_t at(int row, int col) const { return cells[static_cast<std::size_t>(row * width + col)]; }
  std::uint8_t& at(int row, int col) { return cells[static_cast<std::size_t>(row * width + col)]; }
  int size() const { return width * height; }
  int occupied() const {
    int n = 0;
    for (auto c : cells) n += c != 0;
    return n;
  }

  friend bool operator==(const Canvas&, const Canvas&) = default;
};

}  // namespace tplprog
