// Plays one document over a shaped link twice: without a prefetch lead and
// with the lead buffer_plan asks for.
//
//   latency_hiding [FILE] [LATENCY_MS] [BYTES_PER_S]

#include <algorithm>
#include <iostream>
#include <string>

#include "mobit/mobit.hpp"

using namespace mobit;

int main(int argc, char** argv) {
  const std::string file = argc > 1 ? argv[1] : MOBIT_SAMPLE_DOC;
  const harness::NetModel net{argc > 2 ? std::stoull(argv[2]) : 200, argc > 3 ? std::stoull(argv[3]) : 20000, 0};

  const Document doc = load_document_file(file);
  const FlowScript script = linearize(doc);
  const auto plan = buffer_plan(script, {net.latency_ms, net.bytes_per_s});
  const Millis lead = plan.empty() ? 0 : *std::max_element(plan.begin(), plan.end());

  for (const Millis l : {Millis{0}, lead}) {
    LinearizeOptions opts;
    opts.prefetch_lead_ms = l;
    harness::SimulationOptions sim;
    sim.net = net;
    const auto r = harness::simulate(std::make_shared<const CompiledDocument>(compile_document(doc, opts)), sim);
    std::cout << "lead " << l << " ms: startup " << r.startup_ms << " ms, " << r.stall_count << " stall(s), "
              << r.total_stall_ms << " ms stalled\n";
  }
}
