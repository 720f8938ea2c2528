#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "npusim/graph.hpp"

namespace npusim {

/// One schedulable subgraph instance: stage j of chunk i, pinned to a
/// processor, with an offline-profiled duration in integer simulated time
/// units (always > 0).
struct SubgraphNode {
  int chunk = 0;
  int stage = 0;
  Processor processor = Processor::NPU;
  int64_t duration = 1;
};

/// Dependency structure over all (chunk, stage) pairs.
///
/// Attention-kind stages consume the KV of every preceding chunk, so node
/// (i, j) depends on (0..i, j-1). Every other stage depends only on its own
/// chunk's previous stage (i, j-1). Stage 0 nodes have no predecessors.
struct DependencyGraph {
  int num_chunks = 0;
  int num_stages = 0;
  std::vector<SubgraphNode> nodes;            // index = chunk * num_stages + stage
  std::vector<std::vector<int>> predecessors; // node index -> sorted preds
  std::vector<std::vector<int>> successors;

  int index(int chunk, int stage) const { return chunk * num_stages + stage; }
  int size() const { return static_cast<int>(nodes.size()); }
};

/// Builds the exact edge sets for N chunks and M stages. stage_kinds[j]
/// decides whether stage j is attention-kind (cross-chunk edges).
DependencyGraph build_dependencies(int num_chunks, int num_stages,
                                   const std::vector<StageKind>& stage_kinds,
                                   const std::vector<Processor>& stage_procs,
                                   const std::vector<int64_t>& durations);

/// Builds the dependency graph for a prefill trace, taking stage kinds and
/// affinities from the model's stage table and durations from `costs`.
class CostModel;
DependencyGraph dependencies_from_trace(const std::vector<TraceEvent>& trace,
                                        const CostModel& costs);

struct ScheduleEvent {
  int node = 0;  // index into DependencyGraph::nodes
  Processor processor = Processor::NPU;
  int64_t start = 0;
  int64_t end = 0;
};

struct ScheduleReport {
  std::string scheduler;
  std::vector<ScheduleEvent> events;
  int64_t makespan = 0;
  int64_t busy_npu = 0;
  int64_t busy_cpu = 0;

  /// Fraction of the makespan the NPU sits idle.
  double bubble_rate() const {
    return makespan == 0
               ? 0.0
               : 1.0 - static_cast<double>(busy_npu) / static_cast<double>(makespan);
  }
};

/// Contribution of a ready node g, the stall-reduction score: S is the set
/// of not-yet-ready nodes that become ready immediately once g completes,
/// evaluated against nodes already completed or currently running. S is
/// scored by its NPU members (the processor whose stalls matter): a CPU
/// node scores +sum of the NPU durations it unlocks, an NPU node scores
/// -sum of the NPU durations it unlocks. Throws ValueError when g is not
/// ready under that state.
int64_t contribution(const DependencyGraph& g, int node,
                     const std::vector<bool>& completed_or_running);

/// Event-driven out-of-order scheduler: whenever a processor idles, it picks
/// the ready node of its affinity with the largest contribution (ties: lower
/// chunk, then lower stage). At equal timestamps the NPU dispatches first.
ScheduleReport schedule_greedy(const DependencyGraph& g);

/// Program-order baseline: chunks strictly in prompt order, stages in order
/// within each chunk, one subgraph at a time. Processors idle whenever the
/// program order assigns work to the other processor, so the makespan equals
/// the total duration sum.
ScheduleReport schedule_inorder(const DependencyGraph& g);

/// Exhaustive branch-and-bound over dispatch orders (semi-active schedules);
/// provably minimal makespan. Throws ValueError when the instance exceeds
/// `max_nodes`.
ScheduleReport schedule_optimal(const DependencyGraph& g, int max_nodes = 12);

/// Independent validator: dependency respect, per-processor exclusivity,
/// duration conservation, busy-time and makespan bookkeeping. Throws
/// InvariantError with a description of the first violation.
void validate_schedule(const DependencyGraph& g, const ScheduleReport& report);

}  // namespace npusim
