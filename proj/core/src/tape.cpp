#include "mcs/tape.hpp"

#include <stdexcept>

namespace mcs {

namespace {
thread_local Tape* g_active = nullptr;
}

Tape::Tape() : prev_(g_active) { g_active = this; }

Tape::~Tape() { g_active = prev_; }

Tape* Tape::active() { return g_active; }

void Tape::run_backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw std::runtime_error("backward requires a scalar loss, got " + loss.shape_str());
  }
  if (loss.tape_tag() != this) {
    throw std::runtime_error("backward: loss was not produced on this tape");
  }
  Tensor seed = loss;  // shares storage
  seed.grad()[0] += 1.0;
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
}

void backward(const Tensor& loss, Tape& tape) { tape.run_backward(loss); }

}  // namespace mcs
