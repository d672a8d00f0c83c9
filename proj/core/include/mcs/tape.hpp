#pragma once

#include <functional>
#include <vector>

#include "mcs/tensor.hpp"

namespace mcs {

// Linear record of the forward pass. While a Tape is alive it is the active
// tape for the constructing thread; ops append one reverse-pass step per
// executed operation. The reverse pass replays steps in exact reverse
// execution order. A Tape must stay confined to the thread that created it.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  void record(std::function<void()> backward_step) { steps_.push_back(std::move(backward_step)); }
  std::size_t size() const { return steps_.size(); }
  void clear() { steps_.clear(); }

  // Seeds d(loss)/d(loss) = 1 and replays the tape backwards, accumulating
  // gradients into every tensor recorded on it. The loss must be a scalar
  // produced on this tape.
  void run_backward(const Tensor& loss);

 private:
  std::vector<std::function<void()>> steps_;
  Tape* prev_ = nullptr;
};

void backward(const Tensor& loss, Tape& tape);

}  // namespace mcs
