#include <math.h>
#include <stdio.h>
#include "fsdehaze.h"

#define H 8
#define W 8

int main(void) {
    float clean[H * W * 3], hazy[H * W * 3], back[H * W * 3], t[H * W];
    float light[3] = {0.9f, 0.85f, 0.8f};
    for (int i = 0; i < H * W * 3; i++) clean[i] = (float)(i % 17) / 16.0f;
    for (int i = 0; i < H * W; i++) t[i] = 0.5f;
    if (fsd_synthesize_haze(clean, H, W, 3, t, light, hazy) != FSD_STATUS_OK) return 1;
    if (fsd_recover_clear(hazy, H, W, 3, t, light, back) != FSD_STATUS_OK) return 2;
    for (int i = 0; i < H * W * 3; i++)
        if (fabsf(back[i] - clean[i]) > 1e-5f) return 3;

    double p = 0.0;
    if (fsd_psnr(clean, hazy, H, W, 3, 1.0, &p) != FSD_STATUS_OK || !(p > 0.0)) return 4;
    if (fsd_psnr(clean, clean, H, W, 3, 1.0, &p) != FSD_STATUS_OK || !isinf(p)) return 5;

    FsdGenerator *g = NULL;
    if (fsd_generator_new_random(1, &g) != FSD_STATUS_OK) return 6;
    float out[H * W * 3];
    if (fsd_generator_dehaze(g, hazy, H, W, 0, out) != FSD_STATUS_OK) return 7;
    fsd_generator_free(g);

    if (fsd_generator_load("/nonexistent/g.fsd", &g) != FSD_STATUS_IO) return 8;
    if (fsd_last_error() == NULL) return 9;
    printf("ok %s\n", fsd_version());
    return 0;
}
