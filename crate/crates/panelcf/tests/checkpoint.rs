use panelcf::checkpoint::{Checkpoint, Model};
use panelcf_core::neural::{EncoderDecoderConfig, EncoderDecoderNet, Params, RvaeConfig, RvaeNet, Standardizer};
use panelcf_core::rng::rng_from_seed;

fn bits<P: Params>(p: &P) -> Vec<u64> {
    p.flatten().iter().map(|x| x.to_bits()).collect()
}

#[test]
fn encoder_decoder_round_trip_is_lossless() {
    let net = EncoderDecoderNet::new(1, 5, &mut rng_from_seed(3));
    let standardizer = Standardizer { mean: 0.1 + 0.2, scale: 1.0 / 3.0 };
    let c = Checkpoint::new(Model::EncoderDecoder { config: EncoderDecoderConfig::default(), standardizer, net: net.clone() }, "p".into());
    let back = Checkpoint::from_json(&c.to_json()).unwrap();
    assert_eq!(back, c);
    match back.model {
        Model::EncoderDecoder { net: n, standardizer: s, .. } => {
            assert_eq!(bits(&n), bits(&net));
            assert_eq!(s.mean.to_bits(), standardizer.mean.to_bits());
        }
        _ => panic!("wrong kind"),
    }
}

#[test]
fn rvae_round_trip_is_lossless() {
    let cfg = RvaeConfig { enc_hidden: 3, latent_dim: 2, dec_hidden: 3, dec_output: Some(2), ..Default::default() };
    let net = RvaeNet::new(1, &cfg, &mut rng_from_seed(8));
    let c = Checkpoint::new(Model::Rvae { config: cfg, standardizer: Standardizer { mean: -2.0, scale: 7.5 }, net: net.clone() }, "p".into());
    let back = Checkpoint::from_json(&c.to_json()).unwrap();
    match back.model {
        Model::Rvae { net: n, .. } => assert_eq!(bits(&n), bits(&net)),
        _ => panic!("wrong kind"),
    }
}

#[test]
fn rejects_other_versions() {
    let net = EncoderDecoderNet::new(1, 2, &mut rng_from_seed(0));
    let mut c = Checkpoint::new(Model::EncoderDecoder { config: Default::default(), standardizer: Standardizer { mean: 0.0, scale: 1.0 }, net }, "p".into());
    c.version = 99;
    assert!(Checkpoint::from_json(&c.to_json()).is_err());
}
