#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "tplprog/canvas.hpp"
#include "tplprog/grammar.hpp"
#include "tplprog/ir.hpp"

namespace tplprog {

/// Visual tokens per canvas (a 4x4 patch grid) and features per token.
inline constexpr int kVisualTokens = 16;
inline constexpr int kPatchFeatures = 6;

/// Everything the pipeline needs to know about one visual language.
class Domain {
 public:
  virtual ~Domain() = default;

  const std::string& id() const { return grammar_.domainId(); }
  const Grammar& grammar() const { return grammar_; }
  /// "layout" or "stroke".
  virtual std::string family() const = 0;
  virtual int canvasWidth() const = 0;
  virtual int canvasHeight() const = 0;

  /// Throws ExecError (or a subclass) when the program cannot run.
  virtual Canvas execute(const Program& z) const = 0;
  /// Reconstruction distance normalised to [0, 1]; 0 is a perfect match.
  virtual double distance(const Canvas& a, const Canvas& b) const = 0;

  /// Baseline patch features, kVisualTokens * kPatchFeatures values.
  virtual std::vector<double> features(const Canvas& c) const = 0;

  /// Functions whose nodes create a visual part (Prim, DRAW/EMPTY).
  virtual bool partCreating(int fn) const = 0;
  /// Per-cell part labels (-1 = unlabelled). `node_part` maps each pre-order
  /// node of `z` to a part id.
  virtual std::vector<int> propagate(const Program& z, const std::vector<int>& node_part) const = 0;

  /// Lossless symbolic dump and its inverse.
  virtual std::vector<std::uint8_t> dump(const Canvas& c) const = 0;
  virtual Canvas undump(const std::vector<std::uint8_t>& bytes) const = 0;
  /// Rendered image file contents and extension ("ppm" / "pgm").
  virtual std::string encodeImage(const Canvas& c) const = 0;
  virtual std::string imageExtension() const = 0;

 protected:
  explicit Domain(Grammar g) : grammar_(std::move(g)) {}

 private:
  Grammar grammar_;
};

using DomainPtr = std::shared_ptr<const Domain>;

/// Known ids: layout, stroke, layout-toy, layout-tiny.
DomainPtr makeDomain(std::string_view id, GrammarOptions options = {});
std::vector<std::string> domainIds();

}  // namespace tplprog
