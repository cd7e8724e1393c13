import type { StudioApi } from "./api.js";
import {
  COMPONENTS,
  type Component,
  type GalleryEntry,
  type Representation,
  type ReferenceEntry,
  type SlotConfig,
} from "./types.js";

export interface WorkbenchState {
  grayB64: string | null;
  masksB64: string | null;
  maskPreviewB64: string | null;
  references: Map<string, ReferenceEntry>;
  slots: Record<Component, SlotConfig>;
  gallery: GalleryEntry[];
  busy: boolean;
}

export function emptySlots(): Record<Component, SlotConfig> {
  return Object.fromEntries(
    COMPONENTS.map((c) => [c, { kind: "empty" } as SlotConfig]),
  ) as Record<Component, SlotConfig>;
}

export function initialState(): WorkbenchState {
  return {
    grayB64: null,
    masksB64: null,
    maskPreviewB64: null,
    references: new Map(),
    slots: emptySlots(),
    gallery: [],
    busy: false,
  };
}

export function setSlot(
  state: WorkbenchState,
  component: Component,
  config: SlotConfig,
): WorkbenchState {
  return { ...state, slots: { ...state.slots, [component]: config } };
}

export function assignReferenceToAll(
  state: WorkbenchState,
  refId: string,
): WorkbenchState {
  const slots = emptySlots();
  for (const c of COMPONENTS) slots[c] = { kind: "reference", refId };
  return { ...state, slots };
}

export function unresolvedComponents(state: WorkbenchState): Component[] {
  return COMPONENTS.filter((c) => state.slots[c].kind === "empty");
}

/** Resolve the five slots into per-component representations via the API.

Reference slots reuse the representation captured at upload; sample slots
draw their component from a seeded /sample call; auto slots read the
automatic predictor through /sample with an empty subset. Deterministic for
fixed slot configs, which is what makes gallery provenance replayable. */
export async function resolveSlots(
  api: StudioApi,
  grayB64: string,
  masksB64: string,
  slots: Record<Component, SlotConfig>,
  references: Map<string, ReferenceEntry>,
): Promise<Record<Component, Representation>> {
  const parts = {} as Record<Component, Representation>;
  let autoRepr: Representation | null = null;
  for (const c of COMPONENTS) {
    const slot = slots[c];
    if (slot.kind === "empty") {
      throw new Error(`component ${c} has no slot assignment`);
    }
    if (slot.kind === "reference") {
      const ref = references.get(slot.refId);
      if (!ref) throw new Error(`unknown reference ${slot.refId}`);
      parts[c] = ref.representation;
    } else if (slot.kind === "sample") {
      const res = await api.sample(grayB64, masksB64, slot.seed, [c], null);
      parts[c] = res.representation;
    } else {
      if (autoRepr === null) {
        const res = await api.sample(grayB64, masksB64, 0, [], null);
        autoRepr = res.representation;
      }
      parts[c] = autoRepr;
    }
  }
  return parts;
}

export interface ColorizeOutcome {
  entry: GalleryEntry;
  state: WorkbenchState;
}

let entryCounter = 0;

/** Run the full slot resolution -> /mix -> /colorize pipeline and append the
result (with its provenance) to the gallery. */
export async function colorizeNow(
  api: StudioApi,
  state: WorkbenchState,
): Promise<ColorizeOutcome> {
  if (!state.grayB64 || !state.masksB64) {
    throw new Error("load a grayscale image and parsing first");
  }
  const missing = unresolvedComponents(state);
  if (missing.length) {
    throw new Error(`unassigned components: ${missing.join(", ")}`);
  }
  const parts = await resolveSlots(
    api,
    state.grayB64,
    state.masksB64,
    state.slots,
    state.references,
  );
  const mixed = (await api.mix(parts)).representation;
  const image = await api.colorize(state.grayB64, state.masksB64, mixed);
  const entry: GalleryEntry = {
    id: `result-${++entryCounter}`,
    imageB64: image.image_b64,
    representation: mixed,
    provenance: {
      slots: structuredClone(state.slots),
      grayB64: state.grayB64,
      masksB64: state.masksB64,
      createdAt: new Date().toISOString(),
    },
  };
  return { entry, state: { ...state, gallery: [entry, ...state.gallery] } };
}

/** Re-run a gallery entry strictly from its stored provenance. */
export async function reproduceEntry(
  api: StudioApi,
  entry: GalleryEntry,
  references: Map<string, ReferenceEntry>,
): Promise<{ imageB64: string; representation: Representation }> {
  const { slots, grayB64, masksB64 } = entry.provenance;
  const parts = await resolveSlots(api, grayB64, masksB64, slots, references);
  const mixed = (await api.mix(parts)).representation;
  const image = await api.colorize(grayB64, masksB64, mixed);
  return { imageB64: image.image_b64, representation: mixed };
}
