#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "tplprog/grammar.hpp"

namespace tplprog {

enum class ArgKind : std::uint8_t { Value, Shared, Free };

/// Annotation of one parameter slot. In a concrete program every slot is a
/// Value; in a template a Value slot is "pinned".
struct Arg {
  ArgKind kind = ArgKind::Free;
  int index = -1;  // value index (Value) or variable id (Shared)

  static Arg value(int v) { return {ArgKind::Value, v}; }
  static Arg shared(int var) { return {ArgKind::Shared, var}; }
  static Arg free() { return {ArgKind::Free, -1}; }

  friend bool operator==(const Arg&, const Arg&) = default;
};

/// Expression-tree node: either a function call or a HOLE.
struct Expr {
  int fn = -1;    // function id, -1 for a hole
  int hole = -1;  // hole slot for holes
  std::vector<Arg> args;
  std::vector<Expr> children;

  bool isHole() const { return fn < 0; }
  static Expr makeHole(int slot) {
    Expr e;
    e.hole = slot;
    return e;
  }
  friend bool operator==(const Expr&, const Expr&) = default;
};

/// Child-index path from the root to a node.
using NodePath = std::vector<int>;

/// Partial program: function skeleton with holes and parameter relations.
class Template {
 public:
  Template() = default;
  /// Validates and renumbers nothing: hole slots must already be 0..k-1 in
  /// pre-order.
  Template(const Grammar& g, Expr root);
  const Expr& root() const { return root_; }
  int holeCount() const { return holes_; }
  friend bool operator==(const Template&, const Template&) = default;

 private:
  Expr root_;
  int holes_ = 0;
};

/// A template with every hole filled by a function subtree. `fillSites()`
/// records where each fill landed, in hole-slot order; the wire format does
/// not carry it.
class Expansion {
 public:
  Expansion() = default;
  Expansion(const Grammar& g, Expr root, std::vector<NodePath> fill_sites = {});
  const Expr& root() const { return root_; }
  const std::vector<NodePath>& fillSites() const { return fill_sites_; }
  friend bool operator==(const Expansion&, const Expansion&) = default;

 private:
  Expr root_;
  std::vector<NodePath> fill_sites_;
};

/// Fully instantiated, executable program.
class Program {
 public:
  Program() = default;
  Program(const Grammar& g, Expr root);
  const Expr& root() const { return root_; }
  friend bool operator==(const Program&, const Program&) = default;

 private:
  Expr root_;
};

using AnyTree = std::variant<Template, Expansion, Program>;

/// Values for the free and shared slots of an expansion. `free` is indexed by
/// sentinel number (pre-order), `shared` by variable id (-1 = unbound).
struct Bindings {
  std::vector<int> free;
  std::array<int, kMaxSharedVars> shared{-1, -1, -1, -1};
  friend bool operator==(const Bindings&, const Bindings&) = default;
};

/// Evidence that a program conforms to a template.
struct Witness {
  std::vector<Expr> fills;  // hole-fill subtrees (with concrete values), by slot
  Bindings bindings;        // for expand(tp, erasedFills) -> instantiate
};

// ---- Tree utilities -------------------------------------------------------

int countHoles(const Expr& e);
int countFree(const Expr& e);
int nodeCount(const Expr& e);
/// Strips parameter values from a subtree, leaving every slot Free.
Expr eraseParams(const Expr& e);
const Expr& nodeAt(const Expr& root, const NodePath& path);
Expr& nodeAt(Expr& root, const NodePath& path);
/// Pre-order list of paths to every node.
std::vector<NodePath> preorderPaths(const Expr& root);
/// Category expected at a path (root category at the root).
int categoryAt(const Grammar& g, const Expr& root, const NodePath& path);

// ---- Core operations ------------------------------------------------------

TokenSeq linearize(const Grammar& g, const Template& tp);
TokenSeq linearize(const Grammar& g, const Expansion& se);
TokenSeq linearize(const Grammar& g, const Program& z);

/// Parses a Start/End-framed sequence. Classification: any Hole token makes a
/// Template; otherwise any sentinel or shared token makes an Expansion;
/// otherwise a Program.
AnyTree parse(const Grammar& g, std::span<const Token> tokens);

/// Conformance check. Returns the witness when `z` conforms to `tp`.
std::optional<Witness> conforms(const Grammar& g, const Program& z, const Template& tp);

/// Fills holes in slot order. Fill parameters become Free regardless of the
/// annotations they carry.
Expansion expand(const Grammar& g, const Template& tp, const std::vector<Expr>& fills);

/// Replaces every fill site by a hole again.
Template erase(const Grammar& g, const Expansion& se);

Program instantiate(const Grammar& g, const Expansion& se, const Bindings& bindings);

int descriptionLength(const Grammar& g, const Template& tp);
int descriptionLength(const Grammar& g, const Program& z);

/// Number of free-sentinel prompts plus distinct shared variables: the
/// parameter predictions needed to instantiate `se`.
int paramPredictionCount(const Expr& se_root);

// ---- Text format ----------------------------------------------------------

std::string toText(const Grammar& g, const Expr& e);
std::string toText(const Grammar& g, const Template& tp);
std::string toText(const Grammar& g, const Expansion& se);
std::string toText(const Grammar& g, const Program& z);

/// Parses the S-expression format (see docs/program_format.md). Classified
/// like token sequences.
AnyTree parseText(const Grammar& g, std::string_view text);
Program parseProgramText(const Grammar& g, std::string_view text);
Template parseTemplateText(const Grammar& g, std::string_view text);

std::string tokensToString(const Grammar& g, const TokenSeq& seq);

}  // namespace tplprog
