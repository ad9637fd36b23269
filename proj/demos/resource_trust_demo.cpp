// Sweeps the tolerable-time budget for both task presets over a seeded
// network and prints how many devices pass the resource-trust gate.

#include <cstdio>

#include "gm/decision.hpp"
#include "gm/simnet.hpp"

int main() {
    const gm::sim::SimConfig sim_cfg;
    const gm::sim::Dataset net = gm::sim::generate_network(500, 7, sim_cfg);
    const gm::decide::ChannelModel channel;
    const auto& owner = net.devices[0];

    std::printf("budget_s  face_trusted  virus_trusted\n");
    for (double budget : {40.0, 60.0, 100.0, 200.0, 350.0, 500.0, 700.0,
                          900.0, 1100.0, 1400.0}) {
        int face = 0, virus = 0;
        for (std::size_t i = 1; i < net.devices.size(); ++i) {
            gm::decide::TaskSpec f{gm::decide::mb_to_bits(10.0), 2339.0,
                                   budget};
            gm::decide::TaskSpec v{gm::decide::mb_to_bits(10.0), 32946.0,
                                   budget};
            face += gm::decide::resource_trust(f, owner, net.devices[i],
                                               channel);
            virus += gm::decide::resource_trust(v, owner, net.devices[i],
                                                channel);
        }
        std::printf("%8.0f  %12d  %13d\n", budget, face, virus);
    }
    return 0;
}
