import { describe, expect, it } from "vitest";

import {
  assignReferenceToAll,
  colorizeNow,
  initialState,
  reproduceEntry,
  resolveSlots,
  setSlot,
  unresolvedComponents,
} from "../src/state.js";
import { COMPONENTS, type ReferenceEntry } from "../src/types.js";
import { MockApi, asApi, makeRepresentation } from "./mock_api.js";

function refEntry(id: string): ReferenceEntry {
  return {
    id,
    name: `${id}.png`,
    imageB64: `img-${id}`,
    masksB64: `masks-${id}`,
    representation: makeRepresentation(id),
  };
}

function loadedState() {
  const state = initialState();
  state.grayB64 = "grayB64";
  state.masksB64 = "masksB64";
  const ref = refEntry("ref-1");
  state.references.set(ref.id, ref);
  return { state, ref };
}

describe("slot management", () => {
  it("starts with all components unresolved", () => {
    expect(unresolvedComponents(initialState())).toEqual([...COMPONENTS]);
  });

  it("assigns one reference to every slot", () => {
    const { state } = loadedState();
    const next = assignReferenceToAll(state, "ref-1");
    expect(unresolvedComponents(next)).toEqual([]);
    for (const c of COMPONENTS) {
      expect(next.slots[c]).toEqual({ kind: "reference", refId: "ref-1" });
    }
  });

  it("setSlot replaces a single component only", () => {
    const { state } = loadedState();
    const next = setSlot(assignReferenceToAll(state, "ref-1"), "lips", {
      kind: "sample",
      seed: 7,
    });
    expect(next.slots.lips).toEqual({ kind: "sample", seed: 7 });
    expect(next.slots.skin).toEqual({ kind: "reference", refId: "ref-1" });
  });
});

describe("slot resolution", () => {
  it("single reference on all slots mixes back to that reference", async () => {
    const { state, ref } = loadedState();
    const mock = new MockApi();
    const all = assignReferenceToAll(state, ref.id);
    const parts = await resolveSlots(
      asApi(mock),
      "grayB64",
      "masksB64",
      all.slots,
      all.references,
    );
    const mixed = (await mock.mix(parts)).representation;
    expect(mixed).toEqual(ref.representation);
  });

  it("sampled slots call /sample with a single-component subset", async () => {
    const { state } = loadedState();
    const mock = new MockApi();
    let s = assignReferenceToAll(state, "ref-1");
    s = setSlot(s, "hair", { kind: "sample", seed: 99 });
    await resolveSlots(asApi(mock), "grayB64", "masksB64", s.slots, s.references);
    const sampleCalls = mock.calls.filter((c) => c.path === "/sample");
    expect(sampleCalls).toHaveLength(1);
    expect(sampleCalls[0].body).toMatchObject({ seed: 99, subset: ["hair"] });
  });

  it("auto slots share one predictor call", async () => {
    const { state } = loadedState();
    const mock = new MockApi();
    let s = assignReferenceToAll(state, "ref-1");
    s = setSlot(s, "eyes", { kind: "auto" });
    s = setSlot(s, "hair", { kind: "auto" });
    await resolveSlots(asApi(mock), "grayB64", "masksB64", s.slots, s.references);
    expect(mock.calls.filter((c) => c.path === "/sample")).toHaveLength(1);
  });

  it("rejects unresolved slots", async () => {
    const { state } = loadedState();
    await expect(
      resolveSlots(asApi(new MockApi()), "g", "m", state.slots, state.references),
    ).rejects.toThrow(/no slot assignment/);
  });
});

describe("colorize + gallery provenance", () => {
  it("appends a gallery entry carrying its full provenance", async () => {
    const { state, ref } = loadedState();
    const mock = new MockApi();
    const ready = assignReferenceToAll(state, ref.id);
    const { entry, state: next } = await colorizeNow(asApi(mock), ready);
    expect(next.gallery).toHaveLength(1);
    expect(entry.provenance.grayB64).toBe("grayB64");
    expect(entry.provenance.slots.lips).toEqual({ kind: "reference", refId: ref.id });
    expect(entry.imageB64.startsWith("png:")).toBe(true);
  });

  it("reproduces an entry byte-identically from provenance", async () => {
    const { state, ref } = loadedState();
    const mock = new MockApi();
    let ready = assignReferenceToAll(state, ref.id);
    ready = setSlot(ready, "lips", { kind: "sample", seed: 1234 });
    const { entry } = await colorizeNow(asApi(mock), ready);
    const redo = await reproduceEntry(asApi(mock), entry, ready.references);
    expect(redo.imageB64).toBe(entry.imageB64);
    expect(redo.representation).toEqual(entry.representation);
  });

  it("reproduction is unaffected by later slot changes", async () => {
    const { state, ref } = loadedState();
    const mock = new MockApi();
    const ready = assignReferenceToAll(state, ref.id);
    const { entry, state: after } = await colorizeNow(asApi(mock), ready);
    const mutated = setSlot(after, "lips", { kind: "sample", seed: 555 });
    const redo = await reproduceEntry(asApi(mock), entry, mutated.references);
    expect(redo.imageB64).toBe(entry.imageB64);
  });

  it("refuses to colorize without inputs", async () => {
    await expect(colorizeNow(asApi(new MockApi()), initialState())).rejects.toThrow(
      /grayscale/,
    );
  });
});
