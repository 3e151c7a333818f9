// Bone topology of the 24-joint streamed skeleton (parent index per joint,
// -1 at the pelvis root), mirroring the generator's joint order.

export const PARENTS: readonly number[] = [
  -1, // 0 pelvis
  0, // 1 spine1
  1, // 2 spine2
  2, // 3 spine3
  3, // 4 neck
  4, // 5 head
  3, // 6 left_clavicle
  6, // 7 left_shoulder
  7, // 8 left_elbow
  8, // 9 left_wrist
  3, // 10 right_clavicle
  10, // 11 right_shoulder
  11, // 12 right_elbow
  12, // 13 right_wrist
  0, // 14 left_hip
  14, // 15 left_knee
  15, // 16 left_ankle
  16, // 17 left_foot
  0, // 18 right_hip
  18, // 19 right_knee
  19, // 20 right_ankle
  20, // 21 right_foot
  9, // 22 left_hand
  13, // 23 right_hand
];

export const PELVIS = 0;
