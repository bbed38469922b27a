#include "gfnvi/statespace.hpp"

#include <bit>

#include "gfnvi/error.hpp"
#include "gfnvi/rng.hpp"

namespace gfnvi {

namespace {

void checkDim(int dim) {
  if (dim < 1 || dim > State::kMaxDim) {
    throw Error(ErrorCode::InvalidArgument, "state dimension must be in [1, 64], got " +
                                                std::to_string(dim));
  }
}

std::uint64_t bitAt(int pos) { return std::uint64_t{1} << pos; }

}  // namespace

State::State(int dim) : dim_(dim) { checkDim(dim); }

State::State(std::initializer_list<Bit> bits) : State(std::vector<Bit>(bits)) {}

State::State(const std::vector<Bit>& bits) : dim_(static_cast<int>(bits.size())) {
  checkDim(dim_);
  for (int d = 0; d < dim_; ++d) {
    if (bits[d] != Bit::Unset) setMask_ |= bitAt(d);
    if (bits[d] == Bit::One) oneMask_ |= bitAt(d);
  }
}

Bit State::at(int pos) const {
  if (pos < 0 || pos >= dim_) throw Error(ErrorCode::IndexOutOfRange, "position " + std::to_string(pos));
  if (!(setMask_ & bitAt(pos))) return Bit::Unset;
  return (oneMask_ & bitAt(pos)) ? Bit::One : Bit::Zero;
}

State State::with(int pos, Bit bit) const {
  if (pos < 0 || pos >= dim_) throw Error(ErrorCode::IndexOutOfRange, "position " + std::to_string(pos));
  State out = *this;
  out.setMask_ &= ~bitAt(pos);
  out.oneMask_ &= ~bitAt(pos);
  if (bit != Bit::Unset) out.setMask_ |= bitAt(pos);
  if (bit == Bit::One) out.oneMask_ |= bitAt(pos);
  return out;
}

int State::numSet() const { return std::popcount(setMask_); }

std::string State::toString() const {
  std::string out(dim_, '_');
  for (int d = 0; d < dim_; ++d) {
    const Bit b = at(d);
    if (b == Bit::Zero) out[d] = '0';
    if (b == Bit::One) out[d] = '1';
  }
  return out;
}

State State::parse(const std::string& text) {
  std::vector<Bit> bits;
  bits.reserve(text.size());
  for (char c : text) {
    switch (c) {
      case '_': bits.push_back(Bit::Unset); break;
      case '0': bits.push_back(Bit::Zero); break;
      case '1': bits.push_back(Bit::One); break;
      default: throw Error(ErrorCode::InvalidArgument, "bad state character in '" + text + "'");
    }
  }
  return State(bits);
}

std::size_t StateHash::operator()(const State& s) const noexcept {
  return static_cast<std::size_t>(
      mix64(s.setMask() * 0x9e3779b97f4a7c15ULL ^ mix64(s.oneMask() + static_cast<std::uint64_t>(s.dim()))));
}

int numSetBits(const State& s) { return s.numSet(); }

NumericState toNumeric(const State& s) {
  NumericState out(s.dim(), 0.0);
  for (int d = 0; d < s.dim(); ++d) {
    if (s.setMask() & bitAt(d)) out[d] = (s.oneMask() & bitAt(d)) ? 1.0 : -1.0;
  }
  return out;
}

std::vector<State> children(const State& s) {
  if (s.isTerminating()) {
    throw Error(ErrorCode::TerminatingStateHasNoChildren, s.toString());
  }
  std::vector<State> out;
  out.reserve(2 * (s.dim() - s.numSet()));
  for (int d = 0; d < s.dim(); ++d) {
    if (s.setMask() & bitAt(d)) continue;
    out.push_back(s.with(d, Bit::Zero));
    out.push_back(s.with(d, Bit::One));
  }
  return out;
}

std::vector<State> parents(const State& s) {
  if (s.isRoot()) throw Error(ErrorCode::RootHasNoParents, s.toString());
  std::vector<State> out;
  out.reserve(s.numSet());
  for (int d = 0; d < s.dim(); ++d) {
    if (s.setMask() & bitAt(d)) out.push_back(s.with(d, Bit::Unset));
  }
  return out;
}

AddedBit addedBit(const State& s, const State& child) {
  if (s.dim() != child.dim()) throw Error(ErrorCode::NotAnEdge, "dimension mismatch");
  const std::uint64_t added = child.setMask() & ~s.setMask();
  const bool superset = (s.setMask() & ~child.setMask()) == 0;
  const bool agrees = ((s.oneMask() ^ child.oneMask()) & s.setMask()) == 0;
  if (!superset || !agrees || std::popcount(added) != 1) {
    throw Error(ErrorCode::NotAnEdge, s.toString() + " -> " + child.toString());
  }
  const int pos = std::countr_zero(added);
  return {pos, (child.oneMask() & added) ? Bit::One : Bit::Zero};
}

NumericState flipAddedBit(const State& s, const State& child) {
  const AddedBit added = addedBit(s, child);
  NumericState out = toNumeric(child);
  out[added.position] = -out[added.position];
  return out;
}

State terminalFromIndex(std::uint64_t index, int dim) {
  checkDim(dim);
  if (dim < 64 && index >> dim) throw Error(ErrorCode::IndexOutOfRange, std::to_string(index));
  std::vector<Bit> bits(dim);
  for (int d = 0; d < dim; ++d) {
    bits[d] = ((index >> (dim - 1 - d)) & 1U) ? Bit::One : Bit::Zero;
  }
  return State(bits);
}

std::uint64_t terminalIndex(const State& terminal) {
  if (!terminal.isTerminating()) throw Error(ErrorCode::NotTerminating, terminal.toString());
  std::uint64_t index = 0;
  for (int d = 0; d < terminal.dim(); ++d) {
    index = (index << 1) | ((terminal.oneMask() >> d) & 1U);
  }
  return index;
}

std::uint64_t grayEncode(std::uint64_t n, int bits) {
  if (bits < 1 || bits > 32 || n >> bits) {
    throw Error(ErrorCode::IndexOutOfRange, "cell " + std::to_string(n) + " with " +
                                                std::to_string(bits) + " bits");
  }
  return n ^ (n >> 1);
}

std::uint64_t grayDecode(std::uint64_t code, int bits) {
  if (bits < 1 || bits > 32 || code >> bits) {
    throw Error(ErrorCode::IndexOutOfRange, "code " + std::to_string(code));
  }
  std::uint64_t n = code;
  for (int shift = 1; shift < bits; shift <<= 1) n ^= n >> shift;
  return n;
}

State cellToState(std::uint64_t i, std::uint64_t j, int bits) {
  const std::uint64_t gi = grayEncode(i, bits);
  const std::uint64_t gj = grayEncode(j, bits);
  return terminalFromIndex((gi << bits) | gj, 2 * bits);
}

std::pair<std::uint64_t, std::uint64_t> stateToCell(const State& terminal, int bits) {
  if (terminal.dim() != 2 * bits) {
    throw Error(ErrorCode::DimensionMismatch, "expected dimension " + std::to_string(2 * bits));
  }
  const std::uint64_t index = terminalIndex(terminal);
  const std::uint64_t mask = (std::uint64_t{1} << bits) - 1;
  return {grayDecode(index >> bits, bits), grayDecode(index & mask, bits)};
}

}  // namespace gfnvi
