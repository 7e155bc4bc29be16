"""Joint geometry and color inpainting of damaged 32^3 voxel objects."""
