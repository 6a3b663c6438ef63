#include <stdio.h>
#include "arf.h"
int main(void) {
    ArfGrid *grid = NULL;
    size_t dims[3] = {8, 8, 8};
    float c[3] = {0.2f, 0.4f, 0.6f};
    if (arf_grid_new(dims, 1.0, 200.0f, c, &grid) != ARF_STATUS_OK) { fprintf(stderr, "%s\n", arf_last_error()); return 1; }
    float eye[3] = {0, 0.7f, 3}, target[3] = {0, 0, 0}, bg[3] = {1, 1, 1};
    static float rgb[64 * 64 * 3];
    if (arf_grid_render(grid, eye, target, 64, 64, 0.75f, bg, rgb, 64 * 64 * 3) != ARF_STATUS_OK) return 1;
    printf("%s center %.3f %.3f %.3f\n", arf_version(), rgb[(32*64+32)*3], rgb[(32*64+32)*3+1], rgb[(32*64+32)*3+2]);
    if (arf_grid_load(NULL, &grid) == ARF_STATUS_NULL_POINTER) printf("err: %s\n", arf_last_error());
    arf_grid_free(grid);
    return 0;
}
