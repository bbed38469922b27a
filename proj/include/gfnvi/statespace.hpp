#pragma once

// Bit-append DAG over partially constructed bit vectors.
//
// A state of dimension D is a vector over {Unset, Zero, One}. Every edge sets
// exactly one Unset position, so complete trajectories visit D+1 states and the
// graph is graded by the number of set bits.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

namespace gfnvi {

enum class Bit : std::uint8_t { Unset = 0, Zero = 1, One = 2 };

class State {
 public:
  static constexpr int kMaxDim = 64;

  /// All-Unset (root) state of the given dimension.
  explicit State(int dim);
  State(std::initializer_list<Bit> bits);
  explicit State(const std::vector<Bit>& bits);

  int dim() const { return dim_; }
  Bit at(int pos) const;
  State with(int pos, Bit bit) const;

  int numSet() const;
  bool isTerminating() const { return numSet() == dim_; }
  bool isRoot() const { return setMask_ == 0; }

  std::uint64_t setMask() const { return setMask_; }
  std::uint64_t oneMask() const { return oneMask_; }

  /// Compact text form, one character per position: '_' unset, '0', '1'.
  std::string toString() const;
  static State parse(const std::string& text);

  friend bool operator==(const State& a, const State& b) {
    return a.dim_ == b.dim_ && a.setMask_ == b.setMask_ && a.oneMask_ == b.oneMask_;
  }
  friend bool operator!=(const State& a, const State& b) { return !(a == b); }
  friend bool operator<(const State& a, const State& b) {
    if (a.setMask_ != b.setMask_) return a.setMask_ < b.setMask_;
    return a.oneMask_ < b.oneMask_;
  }

 private:
  int dim_;
  std::uint64_t setMask_ = 0;
  std::uint64_t oneMask_ = 0;
};

struct StateHash {
  std::size_t operator()(const State& s) const noexcept;
};

/// Numeric representation: Unset -> 0, Zero -> -1, One -> +1. Ising spins use
/// the same mapping (Zero is spin -1).
using NumericState = std::vector<double>;

int numSetBits(const State& s);
NumericState toNumeric(const State& s);

/// Children in canonical order: position ascending, Zero before One.
std::vector<State> children(const State& s);
/// Parents in position-ascending order.
std::vector<State> parents(const State& s);

struct AddedBit {
  int position;
  Bit value;
};

/// Position and value set by the edge s -> child. Throws NotAnEdge.
AddedBit addedBit(const State& s, const State& child);

/// Numeric child with the newly added bit negated.
NumericState flipAddedBit(const State& s, const State& child);

/// Terminal state whose bits are the binary expansion of `index`, most
/// significant bit at position 0.
State terminalFromIndex(std::uint64_t index, int dim);
std::uint64_t terminalIndex(const State& terminal);

std::uint64_t grayEncode(std::uint64_t n, int bits);
std::uint64_t grayDecode(std::uint64_t code, int bits);

/// Concatenation of grayEncode(i) and grayEncode(j), MSB first.
State cellToState(std::uint64_t i, std::uint64_t j, int bits);
std::pair<std::uint64_t, std::uint64_t> stateToCell(const State& terminal, int bits);

}  // namespace gfnvi

template <>
struct std::hash<gfnvi::State> {
  std::size_t operator()(const gfnvi::State& s) const noexcept { return gfnvi::StateHash{}(s); }
};
