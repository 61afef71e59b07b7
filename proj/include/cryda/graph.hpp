#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "cryda/tensor.hpp"

namespace cryda::ad {

class Graph;

// Lightweight handle to a node on a Graph's tape.
struct Value {
    Graph* graph = nullptr;
    int id = -1;

    bool valid() const { return graph != nullptr && id >= 0; }
    const Tensor& tensor() const;
    const Shape& shape() const { return tensor().shape; }
    float item() const;
};

// Reverse-mode tape. Nodes are appended in creation order; backward walks
// them in reverse creation order exactly once. The tape and all saved
// activations are retained until reset() or destruction.
class Graph {
  public:
    struct Node {
        Tensor value;                // owned output (unused for external leaves)
        Tensor* external = nullptr;  // set for leaves bound to caller-owned tensors
        std::vector<float> grad;     // node-local gradient buffer
        std::vector<int> inputs;
        std::function<void(Graph&, Node&)> backward_fn;  // null for leaves
        bool requires_grad = false;

        const Tensor& val() const { return external ? *external : value; }
        Tensor& val() { return external ? *external : value; }
    };

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    // Registers a caller-owned tensor as a leaf. If it requires grad,
    // backward() accumulates into its .grad.
    Value leaf(Tensor& t);

    // Takes ownership of a tensor as a non-differentiable constant.
    Value constant(Tensor t);

    // Creates an op node. Used by the primitives in ops.hpp.
    Value make(Tensor out, std::vector<Value> inputs, bool requires_grad,
               std::function<void(Graph&, Node&)> backward_fn);

    // Seeds d(loss)/d(loss) = 1 and propagates. Leaf tensors with
    // requires_grad get their .grad accumulated (allocated on demand).
    // Repeated calls without zero_grads() keep accumulating.
    void backward(const Value& loss);

    // Zeroes every node-local and leaf gradient, keeping values intact.
    void zero_grads();

    // Drops the whole tape.
    void reset();

    Node& node(int id) { return nodes_[std::size_t(id)]; }
    const Node& node(int id) const { return nodes_[std::size_t(id)]; }
    int size() const { return int(nodes_.size()); }

    // Accumulates `g` into a node's local gradient buffer.
    void accumulate(int id, const float* g, std::int64_t n);
    float* grad_buffer(int id);

  private:
    std::vector<Node> nodes_;
};

}  // namespace cryda::ad
